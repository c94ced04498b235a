#include "cdlds/smoother.hpp"

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

Eigen::LLT<Matrix> cholesky_or_throw(const Matrix& S, const char* what, std::size_t k) {
  Eigen::LLT<Matrix> llt(symmetrize(S));
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what), k);
  return llt;
}

void finish_moments(const FilterPass& pass, SmoothedMoments& sm) {
  const std::size_t N = sm.mu.size();
  sm.Exx.resize(N);
  sm.Exx_prev.assign(N, Matrix());
  for (std::size_t k = 0; k < N; ++k) {
    sm.Exx[k] = sm.P[k] + sm.mu[k] * sm.mu[k].transpose();
    if (k == 0) continue;
    const FilterStep& s = pass.steps[k];
    const auto llt = cholesky_or_throw(s.P_prior, "smoother: prior covariance is singular", k);
    const Matrix X = llt.solve(s.F * pass.steps[k - 1].P_post);
    sm.Exx_prev[k] = sm.P[k] * X + sm.mu[k] * sm.mu[k - 1].transpose();
  }
}

}  // namespace

GaussianMoments rts_step(const FilterStep& at, const FilterStep& next,
                         const GaussianMoments& smoothed_next) {
  const auto llt = cholesky_or_throw(next.P_prior, "rts_smoother: prior covariance is singular",
                                     NumericalError::npos);
  // G = P_f F^T (P^-)^{-1}
  const Matrix G = llt.solve(next.F * at.P_post).transpose();
  GaussianMoments out;
  out.mu = at.mu_post + G * (smoothed_next.mu - next.mu_prior);
  out.P = symmetrize(at.P_post + G * (smoothed_next.P - next.P_prior) * G.transpose());
  return out;
}

SmoothedMoments rts_smoother(const ModelParams& params, const TimedObservations& data,
                             const FilterPass& pass) {
  require_consistent_shapes(params);
  const std::size_t N = pass.steps.size();
  if (N != data.size()) throw InvalidArgument("rts_smoother: pass and data lengths differ");
  SmoothedMoments sm;
  sm.mu.resize(N);
  sm.P.resize(N);
  sm.mu[N - 1] = pass.steps[N - 1].mu_post;
  sm.P[N - 1] = pass.steps[N - 1].P_post;
  for (std::size_t k = N - 1; k-- > 0;) {
    try {
      auto g = rts_step(pass.steps[k], pass.steps[k + 1], {sm.mu[k + 1], sm.P[k + 1]});
      sm.mu[k] = std::move(g.mu);
      sm.P[k] = std::move(g.P);
    } catch (const NumericalError&) {
      throw NumericalError("rts_smoother: prior covariance is singular", k + 1);
    }
  }
  finish_moments(pass, sm);
  return sm;
}

BackwardInit backward_init(const Vector& mu_f, const Matrix& P_f, const Vector& mu_s,
                           const Matrix& P_s) {
  const Eigen::Index n = P_f.rows();
  const auto llt_f = cholesky_or_throw(P_f, "backward_init: filtered covariance is singular",
                                       NumericalError::npos);
  const auto llt_s = cholesky_or_throw(P_s, "backward_init: smoothed covariance is singular",
                                       NumericalError::npos);
  BackwardInit init;
  const Matrix gap = symmetrize(P_f - P_s);
  const Eigen::LLT<Matrix> llt_gap(gap);
  if (llt_gap.info() == Eigen::Success) {
    // (P_s^{-1} - P_f^{-1})^{-1} = P_f (P_f - P_s)^{-1} P_s
    init.P = symmetrize(P_f * llt_gap.solve(P_s));
  } else {
    const Matrix I = Matrix::Identity(n, n);
    Matrix info = symmetrize(llt_s.solve(I) - llt_f.solve(I));
    const double tr = info.trace();
    const double jitter = 1e-10 * (tr > 0.0 ? tr / static_cast<double>(n) : 1.0);
    info = nearest_psd(info, jitter);
    init.P = symmetrize(Eigen::LLT<Matrix>(info).solve(I));
    init.regularized = true;
  }
  init.mu = init.P * (llt_s.solve(mu_s) - llt_f.solve(mu_f));
  return init;
}

BackwardInit backward_init(const FilterPass& pass) {
  const std::size_t N = pass.steps.size();
  if (N < 2) throw InvalidArgument("backward_init: need at least two observations");
  const FilterStep& last = pass.steps[N - 1];
  const FilterStep& prev = pass.steps[N - 2];
  const auto tail = rts_step(prev, last, {last.mu_post, last.P_post});
  return backward_init(prev.mu_post, prev.P_post, tail.mu, tail.P);
}

BackwardPass backward_pass(const ModelParams& params, const TimedObservations& data,
                           const BackwardInit& init) {
  require_consistent_shapes(params);
  const std::size_t N = data.size();
  if (N < 2) throw InvalidArgument("backward_pass: need at least two observations");
  const Eigen::Index n = params.A.rows();
  const Matrix I = Matrix::Identity(n, n);
  const Matrix& H = params.H;

  BackwardPass back;
  back.mu.resize(N - 1);
  back.P.resize(N - 1);
  back.W.assign(N, Matrix());
  back.mu[N - 2] = init.mu;
  back.P[N - 2] = init.P;
  back.init_regularized = init.regularized;
  if (init.regularized) {
    back.warnings.push_back("backward_init: information difference was indefinite; regularized");
  }

  for (std::size_t k = N - 2; k-- > 0;) {
    const std::size_t j = k + 1;
    const double tau = data.tau(j);
    const Matrix& Pn = back.P[j];
    const Vector& mun = back.mu[j];

    const Matrix PHt = Pn * H.transpose();
    const auto llt = cholesky_or_throw(H * PHt + params.R,
                                       "backward_pass: H P_b H^T + R not positive definite", j);
    const Matrix W = llt.solve(PHt.transpose()).transpose();
    const Matrix IWH = I - W * H;
    const Matrix updated = IWH * Pn * IWH.transpose() + W * params.R * W.transpose();

    const Matrix back_flow = expm(params.A, -tau);
    const Matrix Q = noise_covariance_Q(params.A, params.Qc, tau);
    back.P[k] = symmetrize(back_flow * (Q + updated) * back_flow.transpose());
    back.mu[k] = back_flow * (mun + W * (data.z(j) - H * mun));
    back.W[j] = W;

    if (Eigen::LLT<Matrix>(back.P[k]).info() != Eigen::Success) {
      throw NumericalError("backward_pass: backward covariance lost positive definiteness", k);
    }
  }
  return back;
}

SmoothedMoments fuse_two_filter(const FilterPass& pass, const BackwardPass& back) {
  const std::size_t N = pass.steps.size();
  if (back.mu.size() + 1 != N) {
    throw InvalidArgument("fuse_two_filter: backward pass does not match the forward pass");
  }
  SmoothedMoments sm;
  sm.mu.resize(N);
  sm.P.resize(N);
  for (std::size_t k = 0; k + 1 < N; ++k) {
    const Vector& mu_f = pass.steps[k].mu_post;
    const Matrix& P_f = pass.steps[k].P_post;
    // ((P_f)^{-1} + (P_b)^{-1})^{-1} = P_f - P_f (P_f + P_b)^{-1} P_f
    const auto llt = cholesky_or_throw(P_f + back.P[k], "fuse_two_filter: singular fusion", k);
    sm.P[k] = symmetrize(P_f - P_f * llt.solve(P_f));
    sm.mu[k] = mu_f + P_f * llt.solve(back.mu[k] - mu_f);
  }
  sm.mu[N - 1] = pass.steps[N - 1].mu_post;
  sm.P[N - 1] = pass.steps[N - 1].P_post;
  finish_moments(pass, sm);
  return sm;
}

SmoothedMoments two_filter_smoother(const ModelParams& params, const TimedObservations& data,
                                    const FilterPass& pass, std::vector<std::string>* warnings) {
  if (pass.steps.size() == 1) {
    SmoothedMoments sm;
    sm.mu = {pass.steps[0].mu_post};
    sm.P = {pass.steps[0].P_post};
    finish_moments(pass, sm);
    return sm;
  }
  const auto back = backward_pass(params, data, backward_init(pass));
  if (warnings) warnings->insert(warnings->end(), back.warnings.begin(), back.warnings.end());
  return fuse_two_filter(pass, back);
}

}  // namespace cdlds
