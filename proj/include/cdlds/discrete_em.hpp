#pragma once

#include <string>
#include <vector>

#include "cdlds/em.hpp"

namespace cdlds {

/// Time-invariant discrete model x_k = F x_{k-1} + w, w ~ N(0, Q),
/// z_k = H x_k + v, v ~ N(0, R), x_1 ~ N(mu0, P0). Timestamps play no role.
struct DiscreteParams {
  Matrix F;
  Matrix Q;
  Matrix H;
  Matrix R;
  Vector mu0;
  Matrix P0;
};

struct DiscreteEMReport {
  DiscreteParams params;
  std::vector<double> loglik_trace;
  double loglik_initial = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string failure;
};

/// Kalman filter log-likelihood of the rows of `obs` under `params`.
double discrete_log_likelihood(const DiscreteParams& params, const Matrix& obs);

/// Kalman filter + RTS smoother moments for the discrete model.
SmoothedMoments discrete_smoother(const DiscreteParams& params, const Matrix& obs,
                                  double* loglik = nullptr);

/// Classical EM for (F, Q, H, R, mu0, P0). opts.fixed uses Param::A for F
/// and Param::Qc for Q; refine_A, assume_commuting and newton are ignored.
DiscreteEMReport discrete_em(const DiscreteParams& params0, const Matrix& obs,
                             const EMOptions& opts);

}  // namespace cdlds
