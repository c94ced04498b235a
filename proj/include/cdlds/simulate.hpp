#pragma once

#include <cstdint>
#include <limits>
#include <vector>

#include "cdlds/model.hpp"

namespace cdlds {

/// Counter-based generator: draw i is SplitMix64 applied to key + i * phi,
/// so the stream for (seed, i) is fixed regardless of how draws are
/// interleaved across threads.
class CounterRng {
public:
  using result_type = std::uint64_t;

  explicit CounterRng(std::uint64_t seed) : key_(mix(seed ^ 0x6a09e667f3bcc909ULL)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() { return mix(key_ + kGolden * ++counter_); }

  std::uint64_t counter() const { return counter_; }

private:
  static constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

  static constexpr std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// Rates of the two-repressor toggle switch, linearized at (r1, r2).
/// Defaults: alpha_m = 1/5 nM/min, protein lifetime 50 min, K_R = 5 nM,
/// omega = 200, b = alpha_p / beta_m = 10 nM, equilibrium (11/5, 341/5) nM.
struct ToggleRates {
  double alpha_m = 0.2;
  double beta_p = 1.0 / 50.0;
  double K_R = 5.0;
  double omega = 200.0;
  double b = 10.0;
  double r1 = 11.0 / 5.0;
  double r2 = 341.0 / 5.0;
};

/// g_R(r) = (1 + (q/omega)(2 + q)) / (1 + q)^2 with q = r / (2 K_R).
double promoter_activity(double r, double K_R, double omega);

/// g_R'(r) = 8 (1 - omega) / omega * K_R^2 / (r + 2 K_R)^3.
double promoter_activity_deriv(double r, double K_R, double omega);

struct ToggleSystem {
  Matrix A;  // linearized drift
  Matrix B;  // diffusion, used as Qc
};

/// Throws InvalidArgument unless all rates are positive and omega > 1.
ToggleSystem toggle_switch_dynamics(const ToggleRates& rates);

struct Trajectory {
  Vector times;
  Matrix latent;    // N x n
  Matrix observed;  // N x m
};

/// Exact sample of the model at the given times. Normals are drawn in a
/// fixed order (x_1, then per step w_k and v_k) so equal seeds give
/// bit-identical output.
Trajectory sample_trajectory(const ModelParams& params, const Vector& times, std::uint64_t seed);

/// N gaps from N - 1 sorted uniform points on (0, T). Sums to T.
std::vector<double> uniform_breaks(double T, int N, std::uint64_t seed);

/// N gaps tau = scale * Beta(gamma, gamma), clamped below at 1e-9 * scale.
std::vector<double> beta_steps(double gamma, int N, double scale, std::uint64_t seed);

/// Observation times {0, tau_1, tau_1 + tau_2, ...}: N gaps give N + 1 times.
Vector times_from_gaps(const std::vector<double>& taus);

}  // namespace cdlds
