#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cdlds {

/// Bad input: wrong dimensions, non-finite entries, out-of-range scalars.
class InvalidArgument : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

/// A factorization or solve failed mid-computation. `step()` is the time
/// index at which it happened, or npos when the failure is not step-bound.
class NumericalError : public std::runtime_error {
public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit NumericalError(const std::string& what, std::size_t step = npos)
      : std::runtime_error(step == npos ? what : what + " (step " + std::to_string(step) + ")"),
        step_(step) {}

  std::size_t step() const noexcept { return step_; }

private:
  std::size_t step_;
};

}  // namespace cdlds
