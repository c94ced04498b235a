#include "cdlds/em.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "cdlds/errors.hpp"
#include "cdlds/simulate.hpp"

namespace cdlds {
namespace {

void check_moment_inputs(const SmoothedMoments& m, const Vector& taus, const char* what) {
  if (m.size() < 2) throw InvalidArgument(std::string(what) + ": need at least two time steps");
  if (static_cast<std::size_t>(taus.size()) + 1 != m.size()) {
    throw InvalidArgument(std::string(what) + ": taus must have one entry per transition");
  }
}

void check_q_inputs(const SmoothedMoments& m, const std::vector<Matrix>& Qtaus, const char* what) {
  if (Qtaus.size() + 1 != m.size()) {
    throw InvalidArgument(std::string(what) + ": Qtaus must have one entry per transition");
  }
}

// X Y^{-1} for square Y, by solving Y^T Z = X^T. Throws on a singular Y.
Matrix solve_right(const Matrix& X, const Matrix& Y, const char* what) {
  const Eigen::FullPivLU<Matrix> lu(Y.transpose());
  if (!lu.isInvertible()) {
    throw NumericalError(std::string(what) +
                         ": normal matrix is singular; more data or regularization needed");
  }
  return lu.solve(X.transpose()).transpose();
}

// J(A) and its derivatives for fixed moments and Q(tau_k).
class DynamicsObjective {
public:
  DynamicsObjective(const SmoothedMoments& m, const Vector& taus, const std::vector<Matrix>& Qtaus)
      : m_(m), taus_(taus) {
    check_moment_inputs(m, taus, "A objective");
    check_q_inputs(m, Qtaus, "A objective");
    qllt_.reserve(Qtaus.size());
    for (std::size_t k = 0; k < Qtaus.size(); ++k) {
      qllt_.emplace_back(symmetrize(Qtaus[k]));
      if (qllt_.back().info() != Eigen::Success) {
        throw NumericalError("A objective: Q(tau) not positive definite", k + 1);
      }
    }
  }

  std::size_t transitions() const { return qllt_.size(); }

  double value(const Matrix& A) const {
    double total = 0.0;
    for (std::size_t j = 0; j < transitions(); ++j) {
      const std::size_t k = j + 1;
      const Matrix F = expm(A, taus_(static_cast<Eigen::Index>(j)));
      const Matrix FCt = F * m_.Exx_prev[k].transpose();
      const Matrix inner = m_.Exx[k] - FCt - FCt.transpose() + F * m_.Exx[k - 1] * F.transpose();
      total += qllt_[j].solve(inner).trace();
    }
    return total;
  }

  // V_k = Q_k^{-1} (C_k - F_k M_{k-1})
  Matrix residual(const Matrix& F, std::size_t j) const {
    const std::size_t k = j + 1;
    return qllt_[j].solve(m_.Exx_prev[k] - F * m_.Exx[k - 1]);
  }

  // Gradient of the expected log-density (ascent direction for ln p).
  Matrix log_density_gradient(const Matrix& A) const {
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    const Matrix At = A.transpose();
    for (std::size_t j = 0; j < transitions(); ++j) {
      const double tau = taus_(static_cast<Eigen::Index>(j));
      const Matrix F = expm(A, tau);
      g += tau * expm_frechet(At * tau, residual(F, j)).frechet;
    }
    return g;
  }

  Matrix misfit_gradient(const Matrix& A) const { return -2.0 * log_density_gradient(A); }

  Matrix series_gradient(const Matrix& A, int max_order) const {
    Matrix g = Matrix::Zero(A.rows(), A.cols());
    const Matrix At = A.transpose();
    for (std::size_t j = 0; j < transitions(); ++j) {
      const double tau = taus_(static_cast<Eigen::Index>(j));
      const Matrix V = residual(expm(A, tau), j);
      // S_r = sum_{i<=r} (A^T)^i V (A^T)^{r-i} = A^T S_{r-1} + V (A^T)^r
      Matrix S = V;
      Matrix At_pow = Matrix::Identity(A.rows(), A.cols());
      double coeff = tau;  // tau^{r+1} / (r+1)!
      g += coeff * S;
      for (int r = 1; r <= max_order; ++r) {
        At_pow = At_pow * At;
        S = At * S + V * At_pow;
        coeff *= tau / static_cast<double>(r + 1);
        g += coeff * S;
      }
    }
    return g;
  }

private:
  const SmoothedMoments& m_;
  const Vector& taus_;
  std::vector<Eigen::LLT<Matrix>> qllt_;
};

double frob_inner(const Matrix& X, const Matrix& Y) { return (X.array() * Y.array()).sum(); }

// Largest step s in {1, 1/2, ..., 2^-10} from `from` toward `to` whose
// objective is at least objective(from); `from` when none is.
template <class Objective>
Matrix backtrack_toward(const Matrix& from, const Matrix& to, Objective objective) {
  const double base = objective(from);
  double s = 1.0;
  for (int i = 0; i <= 10; ++i, s *= 0.5) {
    const Matrix trial = from + s * (to - from);
    double value = -std::numeric_limits<double>::infinity();
    try {
      value = objective(trial);
    } catch (const std::exception&) {
    }
    if (value >= base) return trial;
  }
  return from;
}

}  // namespace

Param ParamSet::parse(const std::string& name) {
  if (name == "A") return Param::A;
  if (name == "Qc" || name == "B") return Param::Qc;
  if (name == "H") return Param::H;
  if (name == "R") return Param::R;
  if (name == "mu0") return Param::mu0;
  if (name == "P0") return Param::P0;
  throw InvalidArgument("unknown parameter name '" + name + "'");
}

std::string ParamSet::name(Param p) {
  switch (p) {
    case Param::A: return "A";
    case Param::Qc: return "Qc";
    case Param::H: return "H";
    case Param::R: return "R";
    case Param::mu0: return "mu0";
    case Param::P0: return "P0";
  }
  return "?";
}

Matrix update_A_lsq(const SmoothedMoments& m, const Vector& taus) {
  check_moment_inputs(m, taus, "update_A_lsq");
  const Eigen::Index n = m.Exx[0].rows();
  Matrix num = Matrix::Zero(n, n);
  Matrix den = Matrix::Zero(n, n);
  for (std::size_t k = 1; k < m.size(); ++k) {
    const double tau = taus(static_cast<Eigen::Index>(k) - 1);
    const Matrix& M = m.Exx[k - 1];
    const double w = tau * M.trace();
    num += w * (m.Exx_prev[k] - M);
    den += w * tau * M;
  }
  return solve_right(num, den, "update_A_lsq");
}

CommutingUpdate update_A_commuting(const SmoothedMoments& m, const Vector& taus,
                                   const std::vector<Matrix>& Qtaus, const Matrix& A_prev) {
  check_moment_inputs(m, taus, "update_A_commuting");
  check_q_inputs(m, Qtaus, "update_A_commuting");
  const double a_norm = A_prev.norm();
  bool commuting = true;
  for (const Matrix& Q : Qtaus) {
    const double bound = 1e-10 * a_norm * Q.norm();
    const double comm = (A_prev * Q - Q * A_prev).norm();
    if (!(bound > 0.0) || comm > bound) {
      commuting = false;
      break;
    }
  }
  if (!commuting) {
    return {update_A_lsq(m, taus), false,
            "update_A_commuting: A does not commute with Q(tau); used least-squares update"};
  }
  const Eigen::Index n = m.Exx[0].rows();
  Matrix num = Matrix::Zero(n, n);
  Matrix den = Matrix::Zero(n, n);
  for (std::size_t k = 1; k < m.size(); ++k) {
    const double tau = taus(static_cast<Eigen::Index>(k) - 1);
    const Eigen::LLT<Matrix> llt(symmetrize(Qtaus[k - 1]));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("update_A_commuting: Q(tau) not positive definite", k);
    }
    num += llt.solve(m.Exx_prev[k] - m.Exx[k - 1]);
    den += tau * llt.solve(m.Exx[k - 1]);
  }
  return {solve_right(num, den, "update_A_commuting"), true, {}};
}

double expected_loglik_A(const Matrix& A, const SmoothedMoments& m, const Vector& taus,
                         const std::vector<Matrix>& Qtaus) {
  return DynamicsObjective(m, taus, Qtaus).value(A);
}

Matrix grad_A(const Matrix& A, const SmoothedMoments& m, const Vector& taus,
              const std::vector<Matrix>& Qtaus) {
  return DynamicsObjective(m, taus, Qtaus).log_density_gradient(A);
}

Matrix grad_A_series(const Matrix& A, const SmoothedMoments& m, const Vector& taus,
                     const std::vector<Matrix>& Qtaus, int max_order) {
  if (max_order < 0) throw InvalidArgument("grad_A_series: max_order must be >= 0");
  return DynamicsObjective(m, taus, Qtaus).series_gradient(A, max_order);
}

NewtonCgResult refine_A_newton_cg(const Matrix& A0, const SmoothedMoments& m, const Vector& taus,
                                  const std::vector<Matrix>& Qtaus, const NewtonCgOptions& opts) {
  const DynamicsObjective obj(m, taus, Qtaus);
  const Eigen::Index n = A0.rows();
  const int inner_cap = opts.max_inner > 0 ? opts.max_inner : static_cast<int>(n * n);

  NewtonCgResult res;
  res.A = A0;
  double f = obj.value(res.A);
  Matrix g = obj.misfit_gradient(res.A);
  res.objective_initial = f;

  for (; res.iterations < opts.max_outer; ++res.iterations) {
    if (g.norm() <= opts.grad_tol) {
      res.converged = true;
      break;
    }
    // Inner CG on H p = -g; curvature from central differences of the gradient.
    const double h_base = opts.fd_step * (1.0 + res.A.norm());
    Matrix p = Matrix::Zero(n, n);
    Matrix r = -g;
    Matrix d = r;
    double rr = r.squaredNorm();
    const double inner_tol = std::min(0.5, std::sqrt(g.norm())) * g.norm();
    for (int it = 0; it < inner_cap; ++it) {
      const double h = h_base / d.norm();
      const Matrix Hd = (obj.misfit_gradient(res.A + h * d) - obj.misfit_gradient(res.A - h * d)) /
                        (2.0 * h);
      const double curv = frob_inner(d, Hd);
      if (!(curv > 0.0)) {
        if (it == 0) p = -g;
        break;
      }
      const double alpha = rr / curv;
      p += alpha * d;
      r -= alpha * Hd;
      const double rr_new = r.squaredNorm();
      if (std::sqrt(rr_new) <= inner_tol) break;
      d = r + (rr_new / rr) * d;
      rr = rr_new;
    }

    double slope = frob_inner(g, p);
    if (!(slope < 0.0)) {
      p = -g;
      slope = -g.squaredNorm();
    }
    double t = 1.0;
    bool accepted = false;
    Matrix trial;
    double f_trial = 0.0;
    for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
      trial = res.A + t * p;
      try {
        f_trial = obj.value(trial);
      } catch (const InvalidArgument&) {
        continue;  // overflow to non-finite exponentials
      }
      if (std::isfinite(f_trial) && f_trial <= f + opts.armijo * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.warning = "refine_A_newton_cg: line search failed; returning best iterate";
      break;
    }
    const double decrease = f - f_trial;
    res.A = trial;
    f = f_trial;
    g = obj.misfit_gradient(res.A);
    if (decrease <= 1e-14 * std::max(1.0, std::abs(f))) {
      res.stalled = true;
      ++res.iterations;
      break;
    }
  }
  if (!res.converged && g.norm() <= opts.grad_tol) res.converged = true;
  if (!res.converged && res.warning.empty()) {
    res.warning = res.stalled ? "refine_A_newton_cg: objective stalled at rounding level"
                              : "refine_A_newton_cg: iteration cap reached";
  }
  res.objective = f;
  res.grad_norm = g.norm();
  return res;
}

Matrix expected_residual_outer(const Matrix& F, const SmoothedMoments& m, std::size_t k) {
  const Matrix FCt = F * m.Exx_prev[k].transpose();
  return symmetrize(m.Exx[k] - FCt - FCt.transpose() + F * m.Exx[k - 1] * F.transpose());
}

double expected_transition_loglik(const Matrix& A, const Matrix& Qc, const SmoothedMoments& m,
                                  const Vector& taus) {
  check_moment_inputs(m, taus, "expected_transition_loglik");
  double total = 0.0;
  for (std::size_t k = 1; k < m.size(); ++k) {
    const DiscretizedStep step = discretize(A, Qc, taus(static_cast<Eigen::Index>(k) - 1));
    const Eigen::LLT<Matrix> llt(step.Q);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Matrix L = llt.matrixL();
    total -= 0.5 * (2.0 * L.diagonal().array().log().sum() +
                    llt.solve(expected_residual_outer(step.F, m, k)).trace());
  }
  return total;
}

CovarianceUpdate update_Qc(const Matrix& A, const SmoothedMoments& m, const Vector& taus) {
  check_moment_inputs(m, taus, "update_Qc");
  const Matrix AP = build_AP(A);
  Vector acc = Vector::Zero(AP.rows());
  for (std::size_t k = 1; k < m.size(); ++k) {
    const double tau = taus(static_cast<Eigen::Index>(k) - 1);
    const Vector z = vech(expected_residual_outer(expm(A, tau), m, k));
    const Eigen::FullPivLU<Matrix> lu(phi1(AP, tau));
    if (!lu.isInvertible()) throw NumericalError("update_Qc: integrated flow is singular", k);
    acc += lu.solve(z);
  }
  acc /= static_cast<double>(m.size() - 1);
  const auto fixed = ensure_positive_definite(unvech(acc));
  return {fixed.value, fixed.repaired};
}

CovarianceUpdate update_Qc_normal_equations(const Matrix& A, const SmoothedMoments& m,
                                            const Vector& taus) {
  check_moment_inputs(m, taus, "update_Qc_normal_equations");
  const Matrix AP = build_AP(A);
  const Eigen::Index p = AP.rows();
  const auto steps = static_cast<Eigen::Index>(m.size() - 1);
  Matrix Ft(steps * p, p);
  Vector Zt(steps * p);
  for (Eigen::Index j = 0; j < steps; ++j) {
    const double tau = taus(j);
    Ft.middleRows(j * p, p) = phi1(AP, tau);
    Zt.segment(j * p, p) =
        vech(expected_residual_outer(expm(A, tau), m, static_cast<std::size_t>(j) + 1));
  }
  const Eigen::CompleteOrthogonalDecomposition<Matrix> cod(Ft);
  const auto fixed = ensure_positive_definite(unvech(cod.solve(Zt)));
  return {fixed.value, fixed.repaired};
}

Matrix apply_diagonal_constraint(const Matrix& Qc) {
  return Matrix(Qc.diagonal().asDiagonal());
}

Matrix update_H(const SmoothedMoments& m, const TimedObservations& data) {
  if (m.size() != data.size()) throw InvalidArgument("update_H: moments and data lengths differ");
  const Eigen::Index n = m.Exx[0].rows();
  Matrix num = Matrix::Zero(data.obs_dim(), n);
  Matrix den = Matrix::Zero(n, n);
  for (std::size_t k = 0; k < m.size(); ++k) {
    num += data.z(k) * m.mu[k].transpose();
    den += m.Exx[k];
  }
  return solve_right(num, den, "update_H");
}

CovarianceUpdate update_R(const SmoothedMoments& m, const TimedObservations& data,
                          const Matrix& H) {
  if (m.size() != data.size()) throw InvalidArgument("update_R: moments and data lengths differ");
  const Eigen::Index dim = data.obs_dim();
  Matrix acc = Matrix::Zero(dim, dim);
  for (std::size_t k = 0; k < m.size(); ++k) {
    const Vector z = data.z(k);
    const Matrix Hmz = H * m.mu[k] * z.transpose();
    acc += z * z.transpose() - Hmz - Hmz.transpose() + H * m.Exx[k] * H.transpose();
  }
  acc /= static_cast<double>(m.size());
  const auto fixed = ensure_positive_definite(acc);
  return {fixed.value, fixed.repaired};
}

Vector update_mu0(const SmoothedMoments& m) { return m.mu.at(0); }

CovarianceUpdate update_P0(const SmoothedMoments& m, const Vector& mu0) {
  const auto fixed = ensure_positive_definite(m.Exx.at(0) - mu0 * mu0.transpose());
  return {fixed.value, fixed.repaired};
}

EMReport run_em(const ModelParams& params0, const TimedObservations& data, const EMOptions& opts) {
  require_valid(params0);
  if (data.size() < 2) throw InvalidArgument("run_em: need at least two observations");
  if (!(opts.tol > 0.0) || opts.max_iters < 1) {
    throw InvalidArgument("run_em: tol must be > 0 and max_iters >= 1");
  }

  EMReport report;
  ModelParams current = params0;
  FilterPass pass;
  try {
    pass = forward_filter(current, data);
  } catch (const NumericalError& e) {
    report.failure = e.what();
    return report;
  }
  report.loglik_initial = log_likelihood(pass);
  double ll_prev = report.loglik_initial;
  const auto& fixed = opts.fixed;
  const Vector& taus = data.taus();
  bool fallback_reported = false;

  for (int it = 1; it <= opts.max_iters; ++it) {
    try {
      const SmoothedMoments moments = two_filter_smoother(current, data, pass, &report.warnings);
      ModelParams next = current;

      if (!fixed.contains(Param::mu0)) next.mu0 = update_mu0(moments);
      if (!fixed.contains(Param::P0)) next.P0 = update_P0(moments, next.mu0).value;

      if (!fixed.contains(Param::A)) {
        // Q(tau_k) at the previous (A, Qc), already computed by the filter.
        std::vector<Matrix> Qtaus;
        Qtaus.reserve(data.size() - 1);
        for (std::size_t k = 1; k < data.size(); ++k) Qtaus.push_back(pass.steps[k].Q);

        Matrix A_closed;
        if (opts.assume_commuting) {
          auto cu = update_A_commuting(moments, taus, Qtaus, current.A);
          if (!cu.warning.empty() && !fallback_reported) {
            report.warnings.push_back(cu.warning);
            fallback_reported = true;
          }
          A_closed = std::move(cu.A);
        } else {
          A_closed = update_A_lsq(moments, taus);
        }

        if (opts.refine_A) {
          // Start from whichever of the closed-form update and the previous
          // iterate fits better.
          const DynamicsObjective obj(moments, taus, Qtaus);
          double f_closed = std::numeric_limits<double>::infinity();
          if (A_closed.allFinite()) {
            try {
              f_closed = obj.value(A_closed);
            } catch (const InvalidArgument&) {
            }
          }
          const double f_prev = obj.value(current.A);
          const Matrix& start = (std::isfinite(f_closed) && f_closed < f_prev) ? A_closed : current.A;
          auto nr = refine_A_newton_cg(start, moments, taus, Qtaus, opts.newton);
          if (!nr.converged && !nr.stalled) {
            report.warnings.push_back("iteration " + std::to_string(it) + ": " + nr.warning);
          }
          next.A = std::move(nr.A);
        } else {
          next.A = std::move(A_closed);
        }
      }

      if (opts.safeguard && !fixed.contains(Param::A)) {
        next.A = backtrack_toward(current.A, next.A, [&](const Matrix& A) {
          return expected_transition_loglik(A, current.Qc, moments, taus);
        });
      }

      if (!fixed.contains(Param::Qc)) {
        auto q = update_Qc(next.A, moments, taus);
        next.Qc = opts.diagonal_Qc ? apply_diagonal_constraint(q.value) : q.value;
        if (opts.diagonal_Qc) next.Qc = ensure_positive_definite(next.Qc).value;
        if (opts.safeguard) {
          // Convex combinations of positive definite matrices stay definite.
          next.Qc = backtrack_toward(current.Qc, next.Qc, [&](const Matrix& Qc) {
            return expected_transition_loglik(next.A, Qc, moments, taus);
          });
        }
      }
      if (!fixed.contains(Param::H)) next.H = update_H(moments, data);
      if (!fixed.contains(Param::R)) next.R = update_R(moments, data, next.H).value;

      pass = forward_filter(next, data);
      const double ll = log_likelihood(pass);
      current = std::move(next);
      report.iterates.push_back(current);
      report.loglik_trace.push_back(ll);
      report.iterations = it;
      if (ll < ll_prev - opts.monotonicity_slack) {
        ++report.monotonicity_violations;
        report.warnings.push_back("iteration " + std::to_string(it) +
                                  ": log-likelihood decreased by " + std::to_string(ll_prev - ll));
      }
      const double change = std::abs(ll - ll_prev);
      ll_prev = ll;
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

Matrix default_initial_A(int n, double rho_est, std::uint64_t seed) {
  if (n < 1) throw InvalidArgument("default_initial_A: n must be >= 1");
  CounterRng rng(seed);
  std::normal_distribution<double> normal(0.0, 0.1);
  Matrix A(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = 0; i < n; ++i) A(i, j) = normal(rng);
  }
  A.diagonal().array() -= 0.5 + rho_est;
  return A;
}

Matrix default_initial_Qc(const TimedObservations& data, int n) {
  if (data.size() < 2) throw InvalidArgument("default_initial_Qc: need two observations");
  const Matrix diffs = data.obs().bottomRows(data.size() - 1) - data.obs().topRows(data.size() - 1);
  const Vector mean = diffs.colwise().mean();
  const Matrix centered = diffs.rowwise() - mean.transpose();
  const double denom = static_cast<double>(std::max<std::size_t>(data.size() - 2, 1));
  const double var = centered.squaredNorm() / denom / static_cast<double>(data.obs_dim());
  const double s = var / data.taus().mean();
  return Matrix::Identity(n, n) * (s > 0.0 ? s : 1.0);
}

}  // namespace cdlds
