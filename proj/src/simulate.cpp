#include "cdlds/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

// Lower factor L with L L^T = S. Zero matrices give a zero factor; PSD
// matrices that defeat LLT fall back to pivoted LDLT.
Matrix sampling_factor(const Matrix& S, std::size_t step, const char* what) {
  const Matrix Ssym = symmetrize(S);
  if (Ssym.isZero(0.0)) return Matrix::Zero(S.rows(), S.cols());
  const Eigen::LLT<Matrix> llt(Ssym);
  if (llt.info() == Eigen::Success) return llt.matrixL();
  const Eigen::LDLT<Matrix> ldlt(Ssym);
  const double tol = 1e-12 * Ssym.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || (ldlt.vectorD().array() < -tol).any()) {
    throw NumericalError(std::string("sample_trajectory: ") + what + " is not positive semi-definite",
                         step);
  }
  const Vector d = ldlt.vectorD().cwiseMax(0.0).cwiseSqrt();
  Matrix L = ldlt.matrixL();
  L = ldlt.transpositionsP().transpose() * L;
  return L * d.asDiagonal();
}

Vector standard_normals(Eigen::Index n, CounterRng& rng, std::normal_distribution<double>& normal) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  return v;
}

}  // namespace

double promoter_activity(double r, double K_R, double omega) {
  if (!(r >= 0.0)) throw InvalidArgument("promoter_activity: r must be >= 0");
  const double q = r / (2.0 * K_R);
  return (1.0 + (q / omega) * (2.0 + q)) / ((1.0 + q) * (1.0 + q));
}

double promoter_activity_deriv(double r, double K_R, double omega) {
  const double d = r + 2.0 * K_R;
  return 8.0 * (1.0 - omega) / omega * K_R * K_R / (d * d * d);
}

ToggleSystem toggle_switch_dynamics(const ToggleRates& k) {
  if (!(k.alpha_m > 0 && k.beta_p > 0 && k.K_R > 0 && k.b > 0 && k.r1 > 0 && k.r2 > 0) ||
      !(k.omega > 1.0)) {
    throw InvalidArgument("toggle_switch_dynamics: rates must be positive and omega > 1");
  }
  ToggleSystem sys;
  sys.A.resize(2, 2);
  sys.A << -k.beta_p, k.b * k.alpha_m * promoter_activity_deriv(k.r2, k.K_R, k.omega),
      k.b * k.alpha_m * promoter_activity_deriv(k.r1, k.K_R, k.omega), -k.beta_p;
  sys.B = Matrix::Zero(2, 2);
  sys.B(0, 0) = k.b * k.b * k.alpha_m * promoter_activity(k.r2, k.K_R, k.omega) + k.beta_p * k.r1;
  sys.B(1, 1) = k.b * k.b * k.alpha_m * promoter_activity(k.r1, k.K_R, k.omega) + k.beta_p * k.r2;
  return sys;
}

Trajectory sample_trajectory(const ModelParams& p, const Vector& times, std::uint64_t seed) {
  const auto N = times.size();
  const auto n = p.A.rows();
  const auto m = p.H.rows();
  if (N < 1) throw InvalidArgument("sample_trajectory: empty time grid");
  for (Eigen::Index k = 1; k < N; ++k) {
    if (!(times(k) > times(k - 1))) {
      throw InvalidArgument("sample_trajectory: times not strictly increasing");
    }
  }

  CounterRng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Matrix LP0 = sampling_factor(p.P0, 0, "P0");
  const Matrix LR = sampling_factor(p.R, 0, "R");

  Trajectory traj{times, Matrix(N, n), Matrix(N, m)};
  Vector x = p.mu0 + LP0 * standard_normals(n, rng, normal);
  traj.latent.row(0) = x.transpose();
  traj.observed.row(0) = (p.H * x + LR * standard_normals(m, rng, normal)).transpose();

  for (Eigen::Index k = 1; k < N; ++k) {
    const auto step = discretize(p.A, p.Qc, times(k) - times(k - 1));
    const Matrix LQ = sampling_factor(step.Q, static_cast<std::size_t>(k), "Q(tau)");
    x = step.F * x + LQ * standard_normals(n, rng, normal);
    traj.latent.row(k) = x.transpose();
    traj.observed.row(k) = (p.H * x + LR * standard_normals(m, rng, normal)).transpose();
  }
  return traj;
}

std::vector<double> uniform_breaks(double T, int N, std::uint64_t seed) {
  if (N < 2 || !(T > 0.0)) throw InvalidArgument("uniform_breaks: need N >= 2 and T > 0");
  CounterRng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, T);
  std::vector<double> points(static_cast<std::size_t>(N - 1));
  for (auto& u : points) {
    do {
      u = unif(rng);
    } while (!(u > 0.0));
  }
  std::sort(points.begin(), points.end());

  std::vector<double> taus(static_cast<std::size_t>(N));
  double prev = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    taus[i] = points[i] - prev;
    prev = points[i];
  }
  taus.back() = T - prev;
  // Coincident draws would give a zero gap; nudge to keep tau > 0.
  const double floor = 1e-12 * T;
  for (auto& t : taus) t = std::max(t, floor);
  return taus;
}

std::vector<double> beta_steps(double gamma, int N, double scale, std::uint64_t seed) {
  if (!(gamma > 0.0) || N < 1 || !(scale > 0.0)) {
    throw InvalidArgument("beta_steps: need gamma > 0, N >= 1, scale > 0");
  }
  CounterRng rng(seed);
  std::gamma_distribution<double> g(gamma, 1.0);
  std::vector<double> taus(static_cast<std::size_t>(N));
  const double floor = 1e-9 * scale;
  for (auto& t : taus) {
    double x = 0.0;
    double y = 0.0;
    do {
      x = g(rng);
      y = g(rng);
    } while (!(x + y > 0.0));
    t = std::max(scale * x / (x + y), floor);
  }
  return taus;
}

Vector times_from_gaps(const std::vector<double>& taus) {
  Vector times(static_cast<Eigen::Index>(taus.size()) + 1);
  times(0) = 0.0;
  for (std::size_t i = 0; i < taus.size(); ++i) {
    times(static_cast<Eigen::Index>(i) + 1) = times(static_cast<Eigen::Index>(i)) + taus[i];
  }
  return times;
}

}  // namespace cdlds
