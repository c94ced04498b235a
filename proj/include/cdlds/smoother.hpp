#pragma once

#include <string>
#include <vector>

#include "cdlds/filter.hpp"

namespace cdlds {

/// Posterior moments given all observations. Exx_prev[k] = E[x_k x_{k-1}^T]
/// is defined for k >= 1 (Exx_prev[0] is empty).
struct SmoothedMoments {
  std::vector<Vector> mu;
  std::vector<Matrix> P;
  std::vector<Matrix> Exx;
  std::vector<Matrix> Exx_prev;

  std::size_t size() const { return mu.size(); }
};

/// Rauch-Tung-Striebel smoother with gain G_k = P_k^{f+} F_{k+1}^T (P_{k+1}^{f-})^{-1}.
SmoothedMoments rts_smoother(const ModelParams& params, const TimedObservations& data,
                             const FilterPass& pass);

struct GaussianMoments {
  Vector mu;
  Matrix P;
};

/// One RTS step: smoothed moments at k from the filter at k, the prior at
/// k + 1, and the smoothed moments at k + 1.
GaussianMoments rts_step(const FilterStep& at, const FilterStep& next,
                         const GaussianMoments& smoothed_next);

/// Backward likelihood p(z_{k+1:N} | x_k) in moment form.
struct BackwardInit {
  Vector mu;
  Matrix P;
  bool regularized = false;  // information difference needed PSD repair
};

/// Inverts the fusion P_s^{-1} = P_f^{-1} + P_b^{-1}:
/// P_b = (P_s^{-1} - P_f^{-1})^{-1}, mu_b = P_b (P_s^{-1} mu_s - P_f^{-1} mu_f).
/// When P_f - P_s is not positive definite (H without full column rank, or
/// roundoff) the information difference is projected with nearest_psd.
BackwardInit backward_init(const Vector& mu_f, const Matrix& P_f, const Vector& mu_s,
                           const Matrix& P_s);

/// Initialization at the second-to-last step from one RTS step off the
/// final filtered posterior. Requires at least two observations.
BackwardInit backward_init(const FilterPass& pass);

/// Backward two-filter recursion. mu[k], P[k] are defined for
/// k = 0 .. N-2 (index N-2 is the initialization); W[k + 1] is the
/// backward gain consumed while stepping from k + 1 to k.
struct BackwardPass {
  std::vector<Vector> mu;
  std::vector<Matrix> P;
  std::vector<Matrix> W;
  bool init_regularized = false;
  std::vector<std::string> warnings;
};

BackwardPass backward_pass(const ModelParams& params, const TimedObservations& data,
                           const BackwardInit& init);

/// Precision-weighted fusion of forward posterior and backward likelihood,
/// plus the cross moments E[x_k x_{k-1}^T] = P_k^s (P_k^{f-})^{-1} F_k P_{k-1}^{f+} + mu mu^T.
SmoothedMoments fuse_two_filter(const FilterPass& pass, const BackwardPass& back);

/// backward_init + backward_pass + fuse_two_filter. Handles N = 1.
SmoothedMoments two_filter_smoother(const ModelParams& params, const TimedObservations& data,
                                    const FilterPass& pass, std::vector<std::string>* warnings = nullptr);

}  // namespace cdlds
