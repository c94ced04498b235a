#include <doctest.h>

#include <cmath>
#include <limits>

#include "cdlds/errors.hpp"
#include "cdlds/matexp.hpp"
#include "cdlds/simulate.hpp"
#include "oracles.hpp"

#include <unsupported/Eigen/KroneckerProduct>

using namespace cdlds;

namespace {
Matrix mat2(double a, double b, double c, double d) {
  Matrix M(2, 2);
  M << a, b, c, d;
  return M;
}
}  // namespace

TEST_CASE("expm basic values") {
  CHECK(expm(Matrix::Zero(2, 2), 1.0).isApprox(Matrix::Identity(2, 2)));
  Matrix D = Matrix::Zero(2, 2);
  D.diagonal().setConstant(-0.5);
  const Matrix E = expm(D, 2.0);
  CHECK(E(0, 0) == doctest::Approx(std::exp(-1.0)).epsilon(1e-15));
  CHECK(E(1, 1) == doctest::Approx(0.367879).epsilon(1e-6));
  CHECK(E(0, 1) == 0.0);
}

TEST_CASE("expm of the toggle matrix matches a Taylor-series oracle") {
  const Matrix A = toggle_switch_dynamics(ToggleRates{}).A;
  CHECK(oracle::rel_err(expm(A, 1.0), oracle::expm_taylor(A)) < 1e-14);
  CHECK(oracle::rel_err(expm(30.0 * A, 7.0), oracle::expm_taylor(210.0 * A)) < 1e-12);
}

TEST_CASE("expm agrees with independent oracles over a range of norms") {
  oracle::Rng rng(11);
  for (int trial = 0; trial < 40; ++trial) {
    const int n = rng.integer(1, 6);
    const double scale = std::pow(10.0, rng.uniform(-4.0, 1.3));
    const Matrix M = rng.normal(n, n) * scale;
    const Matrix ref = oracle::expm_taylor(M);
    CHECK(oracle::rel_err(expm(M), ref) < 1e-12 * std::max(1.0, M.norm()));
  }
}

TEST_CASE("expm determinant and semigroup identities") {
  oracle::Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.integer(1, 5);
    const Matrix M = rng.stable(n, 0.1);
    const double s = rng.uniform(0.0, 3.0);
    const double t = rng.uniform(0.0, 3.0);
    CHECK(expm(M, s).determinant() == doctest::Approx(std::exp(s * M.trace())).epsilon(1e-10));
    CHECK(oracle::rel_err(expm(M, s + t), expm(M, s) * expm(M, t)) < 1e-10);
  }
}

TEST_CASE("expm rejects non-finite input") {
  Matrix M = Matrix::Zero(2, 2);
  M(0, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(expm(M), InvalidArgument);
  CHECK_THROWS_AS(expm(Matrix::Identity(2, 2), std::numeric_limits<double>::infinity()),
                  InvalidArgument);
}

TEST_CASE("expm_frechet special cases") {
  const Matrix V = mat2(1, 2, 3, 4);
  const auto z = expm_frechet(Matrix::Zero(2, 2), V);
  CHECK(z.exp.isApprox(Matrix::Identity(2, 2)));
  CHECK((z.frechet - V).norm() < 1e-15);

  const Matrix a = mat2(0.3, 0, 0, -1.2);
  const Matrix v = mat2(2.0, 0, 0, -0.5);
  const auto d = expm_frechet(a, v);
  CHECK(d.frechet(0, 0) == doctest::Approx(2.0 * std::exp(0.3)).epsilon(1e-14));
  CHECK(d.frechet(1, 1) == doctest::Approx(-0.5 * std::exp(-1.2)).epsilon(1e-14));
  CHECK(std::abs(d.frechet(0, 1)) < 1e-16);

  CHECK_THROWS_AS(expm_frechet(Matrix::Zero(2, 2), Matrix::Zero(3, 3)), InvalidArgument);
}

TEST_CASE("expm_frechet matches central differences and is linear") {
  oracle::Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = rng.integer(2, 4);
    const Matrix M = rng.normal(n, n) * rng.uniform(0.1, 3.0);
    const Matrix V = rng.normal(n, n);
    const double h = 1e-6;
    const Matrix fd = (oracle::expm(M + h * V) - oracle::expm(M - h * V)) / (2 * h);
    const auto res = expm_frechet(M, V);
    CHECK(oracle::rel_err(res.frechet, fd) < 1e-6);
    CHECK(oracle::rel_err(res.exp, oracle::expm(M)) < 1e-12);

    const Matrix V2 = rng.normal(n, n);
    const double a = rng.normal();
    const double b = rng.normal();
    const Matrix lhs = expm_frechet(M, a * V + b * V2).frechet;
    const Matrix rhs = a * res.frechet + b * expm_frechet(M, V2).frechet;
    CHECK(oracle::rel_err(lhs, rhs) < 1e-10);
  }
}

TEST_CASE("expm_frechet matches the integral definition") {
  oracle::Rng rng(14);
  const Matrix X = rng.normal(3, 3);
  const Matrix V = rng.normal(3, 3);
  const Matrix ref = oracle::integrate_matrix(
      [&](double s) { return Matrix(oracle::expm(X * (1 - s)) * V * oracle::expm(X * s)); }, 1.0, 3, 3);
  CHECK(oracle::rel_err(expm_frechet(X, V).frechet, ref) < 1e-10);
}

TEST_CASE("duplication and elimination matrices") {
  CHECK(duplication_matrix(1) == Matrix::Ones(1, 1));
  CHECK(elimination_matrix(1) == Matrix::Ones(1, 1));
  CHECK_THROWS_AS(duplication_matrix(0), InvalidArgument);
  CHECK_THROWS_AS(elimination_matrix(0), InvalidArgument);

  const Matrix S = mat2(1, 2, 2, 3);
  const Matrix D = duplication_matrix(2);
  CHECK(D.rows() == 4);
  CHECK(D.cols() == 3);
  const Vector vecS = Eigen::Map<const Vector>(S.data(), 4);
  CHECK(D * vech(S) == vecS);
  Vector expected(3);
  expected << 1, 2, 3;
  CHECK(elimination_matrix(2) * vecS == expected);
  CHECK(elimination_matrix(2) * D == Matrix::Identity(3, 3));

  for (int n = 2; n <= 5; ++n) {
    const Matrix Dn = duplication_matrix(n);
    CHECK((Dn.array() != 0.0).count() == n * n);
    CHECK((Dn.array() == 1.0).count() == n * n);
  }
  oracle::Rng rng(15);
  for (int n = 1; n <= 6; ++n) {
    const Matrix Sn = rng.symmetric(n);
    const Vector v = Eigen::Map<const Vector>(Sn.data(), n * n);
    CHECK(duplication_matrix(n) * vech(Sn) == v);
    CHECK(elimination_matrix(n) * v == vech(Sn));
    CHECK(elimination_matrix(n) * duplication_matrix(n) == Matrix::Identity(half_size(n), half_size(n)));
    CHECK(unvech(vech(Sn)) == Sn);
  }
}

TEST_CASE("vech and unvech") {
  CHECK(vech(Matrix::Constant(1, 1, 5.0)) == Vector::Constant(1, 5.0));
  const Vector v = vech(Matrix::Identity(2, 2));
  CHECK(v.size() == 3);
  CHECK((v.array() == 1.0).count() == 2);
  CHECK((v.array() == 0.0).count() == 1);
  oracle::Rng rng(16);
  const Matrix S = rng.symmetric(4);
  CHECK(unvech(vech(S)) == S);
  CHECK_THROWS_AS(vech(mat2(1, 2, 3, 4)), InvalidArgument);
  CHECK_THROWS_AS(unvech(Vector::Zero(4)), InvalidArgument);
}

TEST_CASE("build_AP") {
  CHECK(build_AP(Matrix::Constant(1, 1, -0.7))(0, 0) == doctest::Approx(-1.4));
  CHECK(build_AP(Matrix::Zero(3, 3)).isZero());
  oracle::Rng rng(17);
  for (int n = 1; n <= 5; ++n) {
    const Matrix A = rng.normal(n, n);
    const Matrix AP = build_AP(A);
    const Matrix kron_sum = Eigen::kroneckerProduct(Matrix::Identity(n, n), A).eval() +
                            Eigen::kroneckerProduct(A, Matrix::Identity(n, n)).eval();
    CHECK(oracle::rel_err(AP, elimination_matrix(n) * kron_sum * duplication_matrix(n)) < 1e-14);
    const Matrix S = rng.symmetric(n);
    CHECK((AP * vech(S) - vech(A * S + S * A.transpose())).norm() < 1e-12 * (1 + S.norm() * A.norm()));
  }
  const Matrix A = rng.normal(2, 2);
  const Matrix S = rng.symmetric(2);
  const double t = 0.7;
  const Matrix F = oracle::expm(A * t);
  CHECK((oracle::expm(build_AP(A) * t) * vech(S) - vech(F * S * F.transpose())).norm() < 1e-10);
}

TEST_CASE("phi1") {
  CHECK(phi1(Matrix::Zero(3, 3), 2.5).isApprox(2.5 * Matrix::Identity(3, 3)));
  CHECK(phi1(Matrix::Constant(1, 1, -1.0), 1.0)(0, 0) == doctest::Approx(1 - std::exp(-1.0)).epsilon(1e-15));
  oracle::Rng rng(18);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix M = rng.stable(3, 0.2);
    const double t = rng.uniform(0.1, 3.0);
    const Matrix P = phi1(M, t);
    CHECK(oracle::rel_err(P, oracle::quadrature_phi1(M, t)) < 1e-8);
    CHECK((M * P - (oracle::expm(M * t) - Matrix::Identity(3, 3))).norm() < 1e-10);
    const Vector v = rng.normal(3, 1);
    CHECK(oracle::rel_err(phi1_apply(M, t, v), P * v) < 1e-12);
  }
  // Singular M: rotation generator and a nilpotent block.
  const Matrix rot = mat2(0, 1, -1, 0);
  CHECK(oracle::rel_err(phi1(rot, 1.3), oracle::quadrature_phi1(rot, 1.3)) < 1e-10);
  const Matrix nil = mat2(0, 1, 0, 0);
  CHECK(oracle::rel_err(phi1(nil, 2.0), mat2(2, 2, 0, 2)) < 1e-14);
}

TEST_CASE("noise_covariance_Q") {
  CHECK(noise_covariance_Q(Matrix::Identity(2, 2), Matrix::Identity(2, 2), 0.0).isZero());
  CHECK_THROWS_AS(noise_covariance_Q(Matrix::Identity(2, 2), Matrix::Identity(2, 2), -1.0),
                  InvalidArgument);
  const double q = noise_covariance_Q(Matrix::Constant(1, 1, -0.5), Matrix::Ones(1, 1), 1.0)(0, 0);
  CHECK(q == doctest::Approx(1 - std::exp(-1.0)).epsilon(1e-14));

  oracle::Rng rng(19);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix A = rng.stable(3, 0.1);
    const Matrix Qc = rng.spd(3);
    const double tau = rng.uniform(0.05, 3.0);
    const Matrix Q = noise_covariance_Q(A, Qc, tau);
    CHECK(oracle::rel_err(Q, oracle::quadrature_Q(A, Qc, tau)) < 1e-8);
    // vech Q = phi1(A_P, tau) vech Qc
    CHECK(oracle::rel_err(vech(Q), phi1(build_AP(A), tau) * vech(Qc)) < 1e-12);
  }
}

TEST_CASE("noise_covariance_Q is symmetric PSD for stable and unstable A") {
  oracle::Rng rng(20);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = rng.integer(1, 4);
    const Matrix A = rng.normal(n, n) * rng.uniform(0.1, 0.6);
    const Matrix Qc = rng.spd(n);
    const double tau = rng.uniform(0.0, 10.0);
    const Matrix Q = noise_covariance_Q(A, Qc, tau);
    CHECK(is_symmetric(Q));
    const double lo = Eigen::SelfAdjointEigenSolver<Matrix>(Q).eigenvalues().minCoeff();
    CHECK(lo >= -1e-10 * Q.norm());
  }
}

TEST_CASE("nearest_psd") {
  oracle::Rng rng(21);
  const Matrix S = rng.spd(3);
  CHECK((nearest_psd(S, 0.0) - S).norm() < 1e-12);
  Matrix D = Matrix::Zero(2, 2);
  D(0, 0) = 1.0;
  D(1, 1) = -0.1;
  const Matrix fixed = nearest_psd(D, 1e-8);
  CHECK(fixed(0, 0) == doctest::Approx(1 + 1e-8).epsilon(1e-15));
  CHECK(fixed(1, 1) == doctest::Approx(1e-8).epsilon(1e-9));

  // Projection by an independent solver (Jacobi SVD on the symmetric input).
  const Matrix X = rng.symmetric(4) + 0.3 * Matrix::Identity(4, 4);
  const Eigen::JacobiSVD<Matrix> svd(X, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Matrix H = svd.matrixV() * svd.singularValues().asDiagonal() * svd.matrixV().transpose();
  const Matrix ref = 0.5 * (X + H);  // polar decomposition form of the PSD projection
  CHECK(oracle::rel_err(nearest_psd(X, 0.0), ref) < 1e-10);
  const Matrix P = nearest_psd(X, 0.0);
  // No random PSD matrix is closer.
  for (int i = 0; i < 50; ++i) {
    const Matrix Y = rng.spd(4, 0.0) * rng.uniform(0.0, 2.0);
    CHECK((X - Y).norm() >= (X - P).norm() - 1e-12);
  }
}

TEST_CASE("ensure_positive_definite repairs only when needed") {
  const Matrix I = Matrix::Identity(2, 2);
  const auto ok = ensure_positive_definite(I);
  CHECK_FALSE(ok.repaired);
  CHECK(ok.value == I);
  Matrix bad = I;
  bad(1, 1) = -0.5;
  const auto rep = ensure_positive_definite(bad);
  CHECK(rep.repaired);
  CHECK(is_positive_definite(rep.value));
  const auto zero = ensure_positive_definite(Matrix::Zero(2, 2));
  CHECK(zero.repaired);
  CHECK(is_positive_definite(zero.value));
}

TEST_CASE("spectral_radius") {
  CHECK(spectral_radius(mat2(0, 1, -1, 0)) == doctest::Approx(1.0));
  CHECK(spectral_radius(mat2(-3, 0, 0, 2)) == doctest::Approx(3.0));
}
