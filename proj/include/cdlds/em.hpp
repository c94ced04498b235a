#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cdlds/smoother.hpp"

namespace cdlds {

enum class Param : unsigned { A = 1u, Qc = 2u, H = 4u, R = 8u, mu0 = 16u, P0 = 32u };

/// Set of model parameters, e.g. the ones EM leaves untouched.
class ParamSet {
public:
  ParamSet() = default;
  ParamSet(std::initializer_list<Param> params) {
    for (Param p : params) insert(p);
  }

  void insert(Param p) { bits_ |= static_cast<unsigned>(p); }
  bool contains(Param p) const { return (bits_ & static_cast<unsigned>(p)) != 0; }
  bool empty() const { return bits_ == 0; }

  /// Accepts "A", "Qc", "H", "R", "mu0", "P0"; throws InvalidArgument otherwise.
  static Param parse(const std::string& name);
  static std::string name(Param p);

private:
  unsigned bits_ = 0;
};

struct NewtonCgOptions {
  int max_outer = 50;
  int max_inner = 0;        // 0 means n^2
  double grad_tol = 1e-8;   // on the misfit gradient norm
  double armijo = 1e-4;
  double fd_step = 1e-6;    // Hessian-vector step is fd_step * (1 + ||A||)
};

struct EMOptions {
  double tol = 1e-6;  // absolute log-likelihood change
  int max_iters = 100;
  bool refine_A = true;
  bool assume_commuting = true;  // try the commuting A update when [A, Q(tau_k)] = 0
  bool diagonal_Qc = false;
  ParamSet fixed;
  NewtonCgOptions newton;
  double monotonicity_slack = 1e-6;
  // Backtrack the A and Qc updates toward the previous iterate until the
  // expected complete-data log-likelihood does not decrease.
  bool safeguard = true;
};

struct EMReport {
  std::vector<ModelParams> iterates;  // parameters after each iteration
  std::vector<double> loglik_trace;   // log-likelihood of each iterate
  double loglik_initial = 0.0;        // log-likelihood of the starting point
  bool converged = false;
  int iterations = 0;
  int monotonicity_violations = 0;
  std::vector<std::string> warnings;
  std::string failure;  // non-empty when a numerical error aborted the run

  const ModelParams& final_params() const { return iterates.back(); }
};

// The A-step objective with Q(tau_k) held fixed is the trace misfit
//   J(A) = sum_k tr[(E[x_k x_k^T] - F_k C_k^T - C_k F_k^T + F_k M_{k-1} F_k^T) Q_k^{-1}],
// F_k = e^{A tau_k}, C_k = E[x_k x_{k-1}^T], M_{k-1} = E[x_{k-1} x_{k-1}^T].
// The expected log transition density is -J/2 + const, so its gradient
// (grad_A below) is -1/2 of the misfit gradient.
//
// `taus` has length N - 1 with taus[k - 1] the gap before step k; `Qtaus` is
// indexed the same way.

/// Trace-weighted least-squares update from the first-order expansion of e^{A tau}.
Matrix update_A_lsq(const SmoothedMoments& moments, const Vector& taus);

struct CommutingUpdate {
  Matrix A;
  bool used_commuting = false;
  std::string warning;
};

/// Closed-form update valid when A_prev commutes with every Q(tau_k)
/// (relative commutator <= 1e-10). Falls back to update_A_lsq otherwise.
CommutingUpdate update_A_commuting(const SmoothedMoments& moments, const Vector& taus,
                                   const std::vector<Matrix>& Qtaus, const Matrix& A_prev);

/// J(A); minimized by the A-step.
double expected_loglik_A(const Matrix& A, const SmoothedMoments& moments, const Vector& taus,
                         const std::vector<Matrix>& Qtaus);

/// Gradient of the expected log transition density,
///   sum_k tau_k L(A^T tau_k, Q_k^{-1}(C_k - F_k M_{k-1})),
/// with L the Frechet derivative of the exponential.
Matrix grad_A(const Matrix& A, const SmoothedMoments& moments, const Vector& taus,
              const std::vector<Matrix>& Qtaus);

/// Same gradient from the power series truncated after r = max_order:
///   sum_k sum_r tau_k^{r+1}/(r+1)! sum_{j<=r} (A^T)^j V_k (A^T)^{r-j}.
Matrix grad_A_series(const Matrix& A, const SmoothedMoments& moments, const Vector& taus,
                     const std::vector<Matrix>& Qtaus, int max_order);

struct NewtonCgResult {
  Matrix A;
  int iterations = 0;
  double objective_initial = 0.0;
  double objective = 0.0;
  double grad_norm = 0.0;
  bool converged = false;
  bool stalled = false;  // no representable decrease left before the gradient test passed
  std::string warning;
};

/// Truncated Newton on J with finite-difference Hessian-vector products and
/// Armijo backtracking. Never returns a point with a larger objective than A0.
NewtonCgResult refine_A_newton_cg(const Matrix& A0, const SmoothedMoments& moments,
                                  const Vector& taus, const std::vector<Matrix>& Qtaus,
                                  const NewtonCgOptions& opts = {});

/// Transition part of the expected complete-data log-likelihood,
///   -1/2 sum_k [ln det Q(tau_k) + tr(Q(tau_k)^{-1} E[Z_k])],
/// with Q(tau_k) and E[Z_k] both evaluated at (A, Qc). Returns -inf when
/// some Q(tau_k) is not positive definite.
double expected_transition_loglik(const Matrix& A, const Matrix& Qc, const SmoothedMoments& moments,
                                  const Vector& taus);

/// E[(x_k - F x_{k-1})(x_k - F x_{k-1})^T] from the four moment blocks.
Matrix expected_residual_outer(const Matrix& F, const SmoothedMoments& moments, std::size_t k);

struct CovarianceUpdate {
  Matrix value;
  bool repaired = false;  // projected to the nearest PSD matrix
};

/// vech(Qc) = mean_k phi1(A_P, tau_k)^{-1} vech(E[Z_k]), solved per step.
CovarianceUpdate update_Qc(const Matrix& A, const SmoothedMoments& moments, const Vector& taus);

/// Least-norm solution of the stacked system [phi1(A_P, tau_k)] vech(Qc) = [vech E[Z_k]].
CovarianceUpdate update_Qc_normal_equations(const Matrix& A, const SmoothedMoments& moments,
                                            const Vector& taus);

/// Zeroes the off-diagonal entries.
Matrix apply_diagonal_constraint(const Matrix& Qc);

Matrix update_H(const SmoothedMoments& moments, const TimedObservations& data);
CovarianceUpdate update_R(const SmoothedMoments& moments, const TimedObservations& data,
                          const Matrix& H);
Vector update_mu0(const SmoothedMoments& moments);
CovarianceUpdate update_P0(const SmoothedMoments& moments, const Vector& mu0);

/// Continuous-discrete EM. Each iteration: filter, two-filter smoother,
/// then mu0, P0, A (commuting or least squares, optional Newton-CG), Qc,
/// H, R, skipping parameters in opts.fixed. Stops when the log-likelihood
/// changes by less than opts.tol. Numerical failures end the run with a
/// partial report and `failure` set.
EMReport run_em(const ModelParams& params0, const TimedObservations& data, const EMOptions& opts);

/// Random stable starting point: entries N(0, 0.1^2) minus (0.5 + rho_est) I.
Matrix default_initial_A(int n, double rho_est, std::uint64_t seed);

/// s I with s = mean per-coordinate variance of observation first
/// differences divided by the mean gap.
Matrix default_initial_Qc(const TimedObservations& data, int n);

}  // namespace cdlds
