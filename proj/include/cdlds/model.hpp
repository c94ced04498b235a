#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "cdlds/matexp.hpp"

namespace cdlds {

/// Parameters of the continuous-discrete linear model
///   dx = A x dt + dw,   E[dw dw^T] = Qc dt
///   z_k = H x(t_k) + v_k,   v_k ~ N(0, R)
///   x(t_1) ~ N(mu0, P0)
/// Time is in minutes throughout.
struct ModelParams {
  Matrix A;
  Matrix Qc;
  Matrix H;
  Matrix R;
  Vector mu0;
  Matrix P0;

  int state_dim() const { return static_cast<int>(A.rows()); }
  int obs_dim() const { return static_cast<int>(H.rows()); }
};

/// Every violated invariant, one human-readable line each. Empty when valid.
std::vector<std::string> validate(const ModelParams& params);

/// Throws InvalidArgument listing validate()'s findings.
void require_valid(const ModelParams& params);

/// Shape and finiteness checks only; covariances may be singular. Used by
/// the filter and smoothers, which only need H P H^T + R to be definite.
void require_consistent_shapes(const ModelParams& params);

/// Observation series with strictly increasing timestamps. Row k of obs()
/// is z at times()[k]. taus()[k - 1] = times()[k] - times()[k - 1].
class TimedObservations {
public:
  TimedObservations(Vector times, Matrix obs);

  std::size_t size() const { return static_cast<std::size_t>(times_.size()); }
  int obs_dim() const { return static_cast<int>(obs_.cols()); }
  const Vector& times() const { return times_; }
  const Matrix& obs() const { return obs_; }
  const Vector& taus() const { return taus_; }

  /// Gap preceding observation k (k >= 1).
  double tau(std::size_t k) const { return taus_(static_cast<Eigen::Index>(k) - 1); }
  Vector z(std::size_t k) const { return obs_.row(static_cast<Eigen::Index>(k)).transpose(); }

private:
  Vector times_;
  Matrix obs_;
  Vector taus_;
};

/// Exact one-step transition over a gap tau.
struct DiscretizedStep {
  Matrix F;  // e^{A tau}
  Matrix Q;  // int_0^tau e^{As} Qc e^{A^T s} ds
};

DiscretizedStep discretize(const Matrix& A, const Matrix& Qc, double tau);

}  // namespace cdlds
