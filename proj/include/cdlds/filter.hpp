#pragma once

#include <vector>

#include "cdlds/model.hpp"

namespace cdlds {

/// One step of the forward pass. For k = 0 the prior is (mu0, P0) and F, Q
/// are empty; for k >= 1 the prior is the exact propagation over tau_k.
struct FilterStep {
  Vector mu_prior;
  Matrix P_prior;
  Vector mu_post;
  Matrix P_post;
  Matrix gain;
  double loglik = 0.0;  // ln N(z_k | H mu_prior, H P_prior H^T + R)
  Matrix F;             // e^{A tau_k}
  Matrix Q;             // Q(tau_k)
};

struct FilterPass {
  std::vector<FilterStep> steps;
};

/// Continuous-discrete Kalman filter. Throws NumericalError naming the step
/// when the innovation covariance is not positive definite.
FilterPass forward_filter(const ModelParams& params, const TimedObservations& data);

/// Sum of the per-step predictive log-densities: ln p(z_1, ..., z_N).
double log_likelihood(const FilterPass& pass);

}  // namespace cdlds
