// Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "cdlds/bench.hpp"
#include "cdlds/discrete_em.hpp"
#include "cdlds/em.hpp"
#include "cdlds/simulate.hpp"
#include "oracles.hpp"

using namespace cdlds;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string fmt(const char* f, double a, double b) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

std::vector<Matrix> q_list(const Matrix& A, const Matrix& Qc, const Vector& taus) {
  std::vector<Matrix> out;
  for (Eigen::Index j = 0; j < taus.size(); ++j) out.push_back(oracle::van_loan_Q(A, Qc, taus(j)));
  return out;
}

Outcome smoother_equivalence() {
  oracle::Rng rng(1001);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 1 + trial % 4;
    const int m = n + rng.integer(0, 2);
    const int N = rng.integer(5, 50);
    const ModelParams p = oracle::random_model(rng, n, m);
    const Vector t = oracle::times_from_taus(rng.taus(N - 1, 0.01, 2.0));
    const TimedObservations d = oracle::random_data(rng, p, t);
    const FilterPass pass = forward_filter(p, d);
    const SmoothedMoments rts = rts_smoother(p, d, pass);
    const BackwardPass back = backward_pass(p, d, backward_init(pass));
    const SmoothedMoments two = fuse_two_filter(pass, back);
    for (int k = 0; k < N; ++k) {
      worst = std::max(worst, oracle::rel_err(two.mu[k], rts.mu[k]));
      worst = std::max(worst, oracle::rel_err(two.P[k], rts.P[k]));
      if (k > 0) worst = std::max(worst, oracle::rel_err(two.Exx_prev[k], rts.Exx_prev[k]));
    }
  }
  return {worst < 1e-8, fmt("max relative difference %.2e over 50 models", worst)};
}

Outcome dense_conditioning() {
  oracle::Rng rng(1002);
  double worst = 0.0;
  int instances = 0;
  for (int n = 1; n <= 3; ++n) {
    for (int trial = 0; trial < 10; ++trial, ++instances) {
      const int m = n + rng.integer(0, 1);
      const int N = rng.integer(2, 60 / n);
      const ModelParams p = oracle::random_model(rng, n, m);
      const Vector t = oracle::times_from_taus(rng.taus(N - 1, 0.01, 2.0), rng.uniform(-2.0, 2.0));
      const TimedObservations d = oracle::random_data(rng, p, t);
      const oracle::DenseModel dense(p, d);
      const FilterPass pass = forward_filter(p, d);
      worst = std::max(worst, std::abs(log_likelihood(pass) - dense.log_marginal()) /
                                  std::max(1.0, std::abs(dense.log_marginal())));
      for (int k = 0; k < N; ++k) {
        const auto post = dense.condition(0, k);
        worst = std::max(worst, oracle::mixed_err(pass.steps[k].mu_post, dense.mean(post, k)));
        worst = std::max(worst, oracle::mixed_err(pass.steps[k].P_post, dense.cov(post, k, k)));
      }
      const auto full = dense.condition(0, N - 1);
      const SmoothedMoments rts = rts_smoother(p, d, pass);
      const SmoothedMoments two = two_filter_smoother(p, d, pass);
      for (const SmoothedMoments* sm : {&rts, &two}) {
        for (int k = 0; k < N; ++k) {
          const Vector mu = dense.mean(full, k);
          worst = std::max(worst, oracle::mixed_err(sm->mu[k], mu));
          worst = std::max(worst, oracle::mixed_err(sm->P[k], dense.cov(full, k, k)));
          if (k > 0) {
            const Matrix cross = dense.cov(full, k, k - 1) + mu * dense.mean(full, k - 1).transpose();
            worst = std::max(worst, oracle::mixed_err(sm->Exx_prev[k], cross));
          }
        }
      }
      if (N >= 2) {
        const BackwardPass back = backward_pass(p, d, backward_init(pass));
        for (int k = 0; k + 1 < N; ++k) {
          const auto ref = dense.backward_likelihood(k);
          worst = std::max(worst, oracle::mixed_err(back.mu[k], ref.mean));
          worst = std::max(worst, oracle::mixed_err(back.P[k], ref.cov));
        }
      }
    }
  }
  return {worst < 1e-7, fmt("max error %.2e over %.0f instances", worst, instances)};
}

Outcome noise_covariance() {
  oracle::Rng rng(1003);
  double worst = 0.0;
  int singular = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + trial % 3;
    Matrix A;
    switch (trial % 5) {
      case 0:
        A = Matrix::Zero(n, n);
        ++singular;
        break;
      case 1: {
        // Eigenvalues +-i w: lambda_i + lambda_j = 0, so A_P is singular.
        A = Matrix::Zero(n, n);
        if (n >= 2) {
          const double w = rng.uniform(0.1, 3.0);
          A(0, 1) = w;
          A(1, 0) = -w;
        }
        ++singular;
        break;
      }
      case 2:
        // Strictly upper triangular: nilpotent.
        A = rng.normal(n, n).triangularView<Eigen::StrictlyUpper>();
        ++singular;
        break;
      default:
        A = rng.normal(n, n) * rng.uniform(0.1, 1.5);
    }
    const Matrix Qc = rng.spd(n, 0.05);
    const double tau = rng.uniform(0.01, 3.0);
    const Matrix ref = oracle::quadrature_Q(A, Qc, tau);
    worst = std::max(worst, oracle::rel_err(noise_covariance_Q(A, Qc, tau), ref));
  }
  return {worst < 1e-8, fmt("max relative error %.2e, %.0f singular generators", worst, singular)};
}

Outcome gradient_fidelity() {
  oracle::Rng rng(1004);
  double worst_fd = 0.0;
  double max_rho_tau = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 3;
    const double tau_hi = 1.0;
    const double radius = 0.2 + 2.8 * trial / 29.0;  // rho(A tau) up to 3
    const Matrix A_true = rng.stable_with_radius(n, radius);
    const Matrix Qc = rng.spd(n);
    Vector taus = rng.taus(10, 0.05, tau_hi);
    taus(0) = tau_hi;
    max_rho_tau = std::max(max_rho_tau, radius * tau_hi);
    const auto m = oracle::exact_moments(A_true, Qc, rng.normal(n, 1), rng.spd(n), taus);
    const auto Q = q_list(A_true, Qc, taus);
    const Matrix A = A_true + 0.1 * radius * rng.normal(n, n);
    const Matrix fd = oracle::central_difference(
        [&](const Matrix& X) { return expected_loglik_A(X, m, taus, Q); }, A, 1e-5 * (1.0 + A.norm()));
    worst_fd = std::max(worst_fd, oracle::rel_err(-2.0 * grad_A(A, m, taus, Q), fd));
  }
  double worst_series = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + trial % 3;
    const Matrix A_true = rng.stable(n, 0.3);
    const Matrix Qc = rng.spd(n);
    const Matrix A = A_true + 0.1 * rng.normal(n, n);
    // Gaps chosen so ||A tau|| <= 1.
    const Vector taus = rng.taus(10, 0.01, 1.0) / std::max(1.0, A.norm());
    const auto m = oracle::exact_moments(A_true, Qc, rng.normal(n, 1), rng.spd(n), taus);
    const auto Q = q_list(A_true, Qc, taus);
    const Matrix g = grad_A(A, m, taus, Q);
    worst_series = std::max(worst_series, oracle::rel_err(grad_A_series(A, m, taus, Q, 30), g));
  }
  return {worst_fd < 1e-5 && worst_series < 1e-8,
          fmt("finite differences %.2e, series %.2e", worst_fd, worst_series) +
              fmt(", rho(A tau) up to %.1f", max_rho_tau)};
}

Outcome mstep_recovery() {
  oracle::Rng rng(1005);
  std::map<std::string, double> worst;
  auto note = [&](const std::string& key, double e) { worst[key] = std::max(worst[key], e); };
  for (int trial = 0; trial < 6; ++trial) {
    const int n = 1 + trial % 3;
    const Vector mu0 = 2.0 * rng.normal(n, 1);
    const Matrix P0 = rng.spd(n);

    const Matrix A0 = rng.stable(n, 0.3);
    const Vector t_first = rng.taus(30, 0.01, 0.3);
    note("A lsq", oracle::rel_err(update_A_lsq(oracle::first_order_moments(A0, rng.spd(n), mu0, P0, t_first),
                                               t_first), A0));

    const Matrix S = rng.symmetric(n);
    const Matrix As = S - (Eigen::SelfAdjointEigenSolver<Matrix>(S).eigenvalues().maxCoeff() + 0.4) *
                              Matrix::Identity(n, n);
    const auto ms = oracle::first_order_moments(As, rng.spd(n), mu0, P0, t_first);
    const auto cu = update_A_commuting(ms, t_first, q_list(As, 0.5 * Matrix::Identity(n, n), t_first), As);
    note("A commuting", cu.used_commuting ? oracle::rel_err(cu.A, As) : 1.0);

    const Matrix A = rng.stable(n, 0.3);
    const Matrix Qc = rng.spd(n);
    const Vector taus = rng.taus(20, 0.05, 1.5);
    const auto me = oracle::exact_moments(A, Qc, mu0, P0, taus);
    note("Qc", oracle::rel_err(update_Qc(A, me, taus).value, Qc));
    note("Qc stacked", oracle::rel_err(update_Qc_normal_equations(A, me, taus).value, Qc));
    note("mu0", oracle::rel_err(update_mu0(me), mu0));
    note("P0", oracle::rel_err(update_P0(me, update_mu0(me)).value, P0));

    const int mdim = 1 + trial % 4;
    const Matrix H = rng.normal(mdim, n);
    const Matrix R = rng.spd(mdim, 0.5);
    const auto fh = oracle::observation_fixture(H, R, Matrix::Zero(n, n), rng);
    note("H", oracle::rel_err(update_H(fh.moments, fh.data), H));
    const auto fr = oracle::observation_fixture(H, R, 0.01 * rng.spd(n), rng);
    note("R", oracle::rel_err(update_R(fr.moments, fr.data, H).value, R));
  }
  for (double radius : {0.2, 0.5, 1.0, 2.0, 3.0, 4.0, 5.0}) {
    const Matrix A = rng.stable_with_radius(2, radius);
    const Matrix Qc = rng.spd(2);
    const Vector taus = rng.taus(40, 0.05, 0.5);
    const auto me = oracle::exact_moments(A, Qc, 3.0 * rng.normal(2, 1), rng.spd(2), taus);
    const auto res = refine_A_newton_cg(update_A_lsq(me, taus), me, taus, q_list(A, Qc, taus));
    note("A Newton-CG", oracle::rel_err(res.A, A));
  }
  bool pass = true;
  std::string detail;
  for (const auto& [key, e] : worst) {
    pass = pass && e < 1e-6;
    detail += (detail.empty() ? "" : ", ") + key + fmt(" %.1e", e);
  }
  return {pass, detail};
}

Outcome em_monotonicity() {
  const ToggleSystem sys = toggle_switch_dynamics(ToggleRates{});
  oracle::Rng rng(1006);
  ModelParams truth;
  truth.A = 10.0 * sys.A;
  truth.Qc = sys.B;
  truth.H = rng.normal(6, 2);
  truth.R = 0.25 * Matrix::Identity(6, 6);
  truth.mu0 = Vector::Zero(2);
  truth.P0 = Matrix::Identity(2, 2);
  const auto traj = sample_trajectory(truth, times_from_gaps(uniform_breaks(60.0, 119, 1006)), 1007);
  const TimedObservations data(traj.times, traj.observed);

  ModelParams init = truth;
  init.A = default_initial_A(2, 0.0, 1008);
  init.Qc = default_initial_Qc(data, 2);
  init.H = truth.H + 0.2 * rng.normal(6, 2);
  init.R = Matrix::Identity(6, 6);

  EMOptions o;
  o.max_iters = 100;
  o.tol = std::numeric_limits<double>::min();
  o.refine_A = true;
  const EMReport rc = run_em(init, data, o);
  double worst_c = 0.0;
  double prev = rc.loglik_initial;
  for (double ll : rc.loglik_trace) {
    worst_c = std::max(worst_c, prev - ll);
    prev = ll;
  }

  const double tau_bar = data.taus().mean();
  const DiscretizedStep step = discretize(init.A, init.Qc, tau_bar);
  const DiscreteParams dinit{step.F, step.Q, init.H, init.R, init.mu0, init.P0};
  const DiscreteEMReport rd = discrete_em(dinit, data.obs(), o);
  double worst_d = 0.0;
  prev = rd.loglik_initial;
  for (double ll : rd.loglik_trace) {
    worst_d = std::max(worst_d, prev - ll);
    prev = ll;
  }
  const bool ok = rc.failure.empty() && rd.failure.empty() && worst_c <= 1e-6 && worst_d <= 1e-9;
  return {ok, fmt("continuous %.0f iterations", rc.iterations) + fmt(", largest drop %.1e", worst_c) +
                  fmt("; discrete %.0f iterations", rd.iterations) + fmt(", largest drop %.1e", worst_d)};
}

Outcome toggle_parameterization() {
  const ToggleSystem sys = toggle_switch_dynamics(ToggleRates{});
  const double rho = spectral_radius(sys.A);
  const double rho30 = spectral_radius(30.0 * sys.A);
  const bool ok = std::abs(rho - 0.034) <= 0.001 && std::abs(rho30 - 1.02) <= 0.01;
  return {ok, fmt("rho(A) = %.5f (0.034 +- 0.001), ", rho) + fmt("rho(30 A) = %.5f (1.02 +- 0.01)", rho30)};
}

double median_of(const std::vector<LossRecord>& recs, double sweep, double LossRecord::*field) {
  std::vector<double> v;
  for (const auto& r : recs)
    if (r.sweep == sweep) v.push_back(r.*field);
  return box_stats(v).median;
}

BoxStats stats_of(const std::vector<LossRecord>& recs, double sweep, double LossRecord::*field) {
  std::vector<double> v;
  for (const auto& r : recs)
    if (r.sweep == sweep) v.push_back(r.*field);
  return box_stats(v);
}

Outcome uniform_breaks_trend() {
  ExperimentConfig c = ExperimentConfig::uniform_breaks_defaults();
  c.sweep = {1.0, 10.0, 30.0};
  c.T_list = {100.0, 60.0, 20.0};
  c.N_list = {200, 120, 40};
  c.replicates = 20;
  c.seed = 1;
  const auto recs = run_uniform_breaks(c);
  std::string detail;
  std::vector<double> ratios;
  double d30 = 0.0, c30 = 0.0;
  for (double w : c.sweep) {
    const double d = median_of(recs, w, &LossRecord::loss_dyn_d);
    const double cc = median_of(recs, w, &LossRecord::loss_dyn_c);
    ratios.push_back(d / cc);
    if (w == 30.0) d30 = d, c30 = cc;
    detail += fmt("omega %.0f: ", w) + fmt("d %.3g c %.3g; ", d, cc);
  }
  const bool monotone = std::is_sorted(ratios.begin(), ratios.end());
  detail += monotone ? "ratio non-decreasing" : "ratio decreases";
  return {c30 <= d30 && monotone, detail};
}

Outcome beta_steps_trend() {
  ExperimentConfig c = ExperimentConfig::beta_steps_defaults();
  c.sweep = {0.5, 2.0, 10000.0};
  c.N = 40;
  c.scale = 0.5;
  c.replicates = 20;
  c.seed = 1;
  const auto recs = run_beta_steps(c);
  const double d_lo = median_of(recs, 0.5, &LossRecord::loss_dyn_d);
  const double d_hi = median_of(recs, 10000.0, &LossRecord::loss_dyn_d);
  std::vector<double> cont;
  for (double g : c.sweep) cont.push_back(median_of(recs, g, &LossRecord::loss_dyn_c));
  double mean = 0.0;
  for (double v : cont) mean += v / static_cast<double>(cont.size());
  double spread = 0.0;
  for (double v : cont) spread = std::max(spread, std::abs(v - mean) / mean);
  const BoxStats sd = stats_of(recs, 10000.0, &LossRecord::loss_dyn_d);
  const BoxStats sc = stats_of(recs, 10000.0, &LossRecord::loss_dyn_c);
  const bool overlap = sd.median >= sc.q1 && sd.median <= sc.q3 && sc.median >= sd.q1 && sc.median <= sd.q3;
  const bool ok = d_lo >= 2.0 * d_hi && spread < 0.5 && overlap;
  return {ok, fmt("discrete ratio %.2f, ", d_lo / d_hi) + fmt("continuous spread %.2f of mean, ", spread) +
                  (overlap ? "medians inside each other's IQR at gamma 10000"
                           : "medians outside each other's IQR at gamma 10000")};
}

struct Criterion {
  const char* name;
  double limit_s;
  std::function<Outcome()> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {"smoother equivalence", 10, smoother_equivalence},
      {"dense conditioning oracle", 30, dense_conditioning},
      {"noise covariance vs quadrature", 10, noise_covariance},
      {"gradient fidelity", 20, gradient_fidelity},
      {"M-step exact recovery", 60, mstep_recovery},
      {"EM monotonicity", 120, em_monotonicity},
      {"toggle parameterization", 1, toggle_parameterization},
      {"uniform-breaks trend", 600, uniform_breaks_trend},
      {"beta-steps trend", 600, beta_steps_trend},
  };
  int failed = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome out;
    try {
      out = c.run();
    } catch (const std::exception& e) {
      out = {false, std::string("threw: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = out.pass && in_time;
    if (!pass) ++failed;
    std::printf("%s  %s: %s [%.2f s, limit %.0f s%s]\n", pass ? "PASS" : "FAIL", c.name, out.detail.c_str(),
                secs, c.limit_s, in_time ? "" : ", exceeded");
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
