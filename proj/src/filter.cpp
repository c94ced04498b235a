#include "cdlds/filter.hpp"

#include <cmath>
#include <numbers>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

void measurement_update(const ModelParams& p, const Vector& z, std::size_t k, FilterStep& s) {
  const Eigen::Index n = p.A.rows();
  const Eigen::Index m = p.H.rows();
  const Matrix PHt = s.P_prior * p.H.transpose();
  const Matrix S = symmetrize(p.H * PHt + p.R);
  const Eigen::LLT<Matrix> llt(S);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("forward_filter: innovation covariance not positive definite", k);
  }
  const Vector innovation = z - p.H * s.mu_prior;
  // K = P H^T S^{-1}, from S K^T = H P.
  s.gain = llt.solve(PHt.transpose()).transpose();
  s.mu_post = s.mu_prior + s.gain * innovation;
  const Matrix IKH = Matrix::Identity(n, n) - s.gain * p.H;
  s.P_post = symmetrize(IKH * s.P_prior);

  const Matrix L = llt.matrixL();
  const Vector white = L.triangularView<Eigen::Lower>().solve(innovation);
  const double logdet = 2.0 * L.diagonal().array().log().sum();
  s.loglik = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) + logdet +
                     white.squaredNorm());
  if (!std::isfinite(s.loglik)) throw NumericalError("forward_filter: non-finite likelihood", k);
}

}  // namespace

FilterPass forward_filter(const ModelParams& params, const TimedObservations& data) {
  require_consistent_shapes(params);
  if (data.obs_dim() != params.obs_dim()) {
    throw InvalidArgument("forward_filter: observation dimension does not match H");
  }
  const std::size_t N = data.size();
  FilterPass pass;
  pass.steps.resize(N);

  FilterStep& first = pass.steps[0];
  first.mu_prior = params.mu0;
  first.P_prior = params.P0;
  measurement_update(params, data.z(0), 0, first);

  for (std::size_t k = 1; k < N; ++k) {
    FilterStep& s = pass.steps[k];
    const FilterStep& prev = pass.steps[k - 1];
    auto step = discretize(params.A, params.Qc, data.tau(k));
    s.F = std::move(step.F);
    s.Q = std::move(step.Q);
    s.mu_prior = s.F * prev.mu_post;
    s.P_prior = symmetrize(s.F * prev.P_post * s.F.transpose() + s.Q);
    measurement_update(params, data.z(k), k, s);
  }
  return pass;
}

double log_likelihood(const FilterPass& pass) {
  double total = 0.0;
  for (const auto& s : pass.steps) total += s.loglik;
  return total;
}

}  // namespace cdlds
