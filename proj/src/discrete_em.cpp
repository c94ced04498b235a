#include "cdlds/discrete_em.hpp"

#include <cmath>
#include <numbers>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

void check_shapes(const DiscreteParams& p, const Matrix& obs) {
  const auto n = p.F.rows();
  const auto m = p.H.rows();
  const bool ok = n >= 1 && p.F.cols() == n && p.Q.rows() == n && p.Q.cols() == n &&
                  p.P0.rows() == n && p.P0.cols() == n && p.mu0.size() == n && m >= 1 &&
                  p.H.cols() == n && p.R.rows() == m && p.R.cols() == m && obs.cols() == m;
  if (!ok) throw InvalidArgument("discrete model: inconsistent shapes");
  if (obs.rows() < 1) throw InvalidArgument("discrete model: no observations");
}

// Filter in the continuous module's step layout so the moment code is shared.
FilterPass discrete_filter(const DiscreteParams& p, const Matrix& obs) {
  check_shapes(p, obs);
  const auto N = static_cast<std::size_t>(obs.rows());
  const Eigen::Index n = p.F.rows();
  const Eigen::Index m = p.H.rows();
  FilterPass pass;
  pass.steps.resize(N);
  for (std::size_t k = 0; k < N; ++k) {
    FilterStep& s = pass.steps[k];
    if (k == 0) {
      s.mu_prior = p.mu0;
      s.P_prior = p.P0;
    } else {
      s.F = p.F;
      s.Q = p.Q;
      s.mu_prior = p.F * pass.steps[k - 1].mu_post;
      s.P_prior = symmetrize(p.F * pass.steps[k - 1].P_post * p.F.transpose() + p.Q);
    }
    const Matrix PHt = s.P_prior * p.H.transpose();
    const Eigen::LLT<Matrix> llt(symmetrize(p.H * PHt + p.R));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("discrete filter: innovation covariance not positive definite", k);
    }
    const Vector innov = obs.row(static_cast<Eigen::Index>(k)).transpose() - p.H * s.mu_prior;
    s.gain = llt.solve(PHt.transpose()).transpose();
    s.mu_post = s.mu_prior + s.gain * innov;
    s.P_post = symmetrize((Matrix::Identity(n, n) - s.gain * p.H) * s.P_prior);
    const Matrix L = llt.matrixL();
    const Vector white = L.triangularView<Eigen::Lower>().solve(innov);
    s.loglik = -0.5 * (static_cast<double>(m) * std::log(2.0 * std::numbers::pi) +
                       2.0 * L.diagonal().array().log().sum() + white.squaredNorm());
  }
  return pass;
}

}  // namespace

double discrete_log_likelihood(const DiscreteParams& params, const Matrix& obs) {
  return log_likelihood(discrete_filter(params, obs));
}

SmoothedMoments discrete_smoother(const DiscreteParams& params, const Matrix& obs,
                                  double* loglik) {
  const FilterPass pass = discrete_filter(params, obs);
  if (loglik) *loglik = log_likelihood(pass);
  const std::size_t N = pass.steps.size();
  SmoothedMoments sm;
  sm.mu.resize(N);
  sm.P.resize(N);
  sm.Exx.resize(N);
  sm.Exx_prev.assign(N, Matrix());
  sm.mu[N - 1] = pass.steps[N - 1].mu_post;
  sm.P[N - 1] = pass.steps[N - 1].P_post;
  std::vector<Matrix> gains(N);
  for (std::size_t k = N - 1; k-- > 0;) {
    const FilterStep& next = pass.steps[k + 1];
    const Eigen::LLT<Matrix> llt(next.P_prior);
    if (llt.info() != Eigen::Success) {
      throw NumericalError("discrete smoother: prior covariance is singular", k + 1);
    }
    gains[k] = llt.solve(params.F * pass.steps[k].P_post).transpose();
    sm.mu[k] = pass.steps[k].mu_post + gains[k] * (sm.mu[k + 1] - next.mu_prior);
    sm.P[k] = symmetrize(pass.steps[k].P_post +
                         gains[k] * (sm.P[k + 1] - next.P_prior) * gains[k].transpose());
  }
  for (std::size_t k = 0; k < N; ++k) {
    sm.Exx[k] = sm.P[k] + sm.mu[k] * sm.mu[k].transpose();
    if (k > 0) {
      sm.Exx_prev[k] = sm.P[k] * gains[k - 1].transpose() + sm.mu[k] * sm.mu[k - 1].transpose();
    }
  }
  return sm;
}

DiscreteEMReport discrete_em(const DiscreteParams& params0, const Matrix& obs,
                             const EMOptions& opts) {
  check_shapes(params0, obs);
  if (obs.rows() < 2) throw InvalidArgument("discrete_em: need at least two observations");
  if (!(opts.tol > 0.0) || opts.max_iters < 1) {
    throw InvalidArgument("discrete_em: tol must be > 0 and max_iters >= 1");
  }
  const auto& fixed = opts.fixed;
  const auto N = static_cast<std::size_t>(obs.rows());
  const Eigen::Index n = params0.F.rows();

  DiscreteEMReport report;
  report.params = params0;
  double ll = 0.0;
  SmoothedMoments sm;
  try {
    sm = discrete_smoother(report.params, obs, &ll);
  } catch (const NumericalError& e) {
    report.failure = e.what();
    return report;
  }
  report.loglik_initial = ll;

  for (int it = 1; it <= opts.max_iters; ++it) {
    try {
      DiscreteParams next = report.params;
      if (!fixed.contains(Param::mu0)) next.mu0 = sm.mu[0];
      if (!fixed.contains(Param::P0)) {
        next.P0 = ensure_positive_definite(sm.Exx[0] - next.mu0 * next.mu0.transpose()).value;
      }
      if (!fixed.contains(Param::A)) {
        Matrix num = Matrix::Zero(n, n);
        Matrix den = Matrix::Zero(n, n);
        for (std::size_t k = 1; k < N; ++k) {
          num += sm.Exx_prev[k];
          den += sm.Exx[k - 1];
        }
        const Eigen::LLT<Matrix> llt(symmetrize(den));
        if (llt.info() != Eigen::Success) {
          throw NumericalError("discrete_em: state second-moment sum is singular");
        }
        next.F = llt.solve(num.transpose()).transpose();
      }
      if (!fixed.contains(Param::Qc)) {
        Matrix acc = Matrix::Zero(n, n);
        for (std::size_t k = 1; k < N; ++k) acc += expected_residual_outer(next.F, sm, k);
        next.Q = ensure_positive_definite(acc / static_cast<double>(N - 1)).value;
      }
      if (!fixed.contains(Param::H)) {
        const TimedObservations idx(Vector::LinSpaced(obs.rows(), 0.0, static_cast<double>(obs.rows() - 1)), obs);
        next.H = update_H(sm, idx);
      }
      if (!fixed.contains(Param::R)) {
        const TimedObservations idx(Vector::LinSpaced(obs.rows(), 0.0, static_cast<double>(obs.rows() - 1)), obs);
        next.R = update_R(sm, idx, next.H).value;
      }

      double ll_next = 0.0;
      sm = discrete_smoother(next, obs, &ll_next);
      report.params = std::move(next);
      report.loglik_trace.push_back(ll_next);
      report.iterations = it;
      const double change = std::abs(ll_next - ll);
      ll = ll_next;
      if (change < opts.tol) {
        report.converged = true;
        break;
      }
    } catch (const NumericalError& e) {
      report.failure = "iteration " + std::to_string(it) + ": " + e.what();
      break;
    }
  }
  return report;
}

}  // namespace cdlds
