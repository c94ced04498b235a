#pragma once

// Dense matrix-exponential kernels and half-vectorization machinery used to
// discretize dx = A x dt + dw exactly over arbitrary steps.
//
// vech() stacks the lower triangle column by column, so for n = 2 the order
// is (S00, S10, S11). duplication_matrix() and elimination_matrix() are built
// for that ordering.

#include <Eigen/Dense>

namespace cdlds {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// e^{M t} by scaling and squaring with Pade approximants (orders 3..13).
Matrix expm(const Matrix& M, double t = 1.0);

struct ExpmFrechet {
  Matrix exp;      // e^{M}
  Matrix frechet;  // L(M, V) = int_0^1 e^{M(1-s)} V e^{Ms} ds
};

/// e^{M} together with its Frechet derivative in direction V, using the
/// scaling-and-squaring recurrence for the pair (Al-Mohy & Higham, 2009).
ExpmFrechet expm_frechet(const Matrix& M, const Matrix& V);

/// n^2 x n(n+1)/2 matrix D with D vech(S) = vec(S) for symmetric S.
Matrix duplication_matrix(int n);

/// n(n+1)/2 x n^2 Moore-Penrose inverse of D. D+ vec(S) = vech(S) for
/// symmetric S and D+ D = I.
Matrix elimination_matrix(int n);

/// Length of vech for an n x n matrix.
constexpr int half_size(int n) { return n * (n + 1) / 2; }

/// Throws InvalidArgument when S is not symmetric to 1e-12 relative.
Vector vech(const Matrix& S);
Matrix unvech(const Vector& h);

/// Generator of the half-vectorized Lyapunov flow:
/// A_P = D+ (I (x) A + A (x) I) D, so that A_P vech(S) = vech(A S + S A^T).
Matrix build_AP(const Matrix& A);

/// int_0^t e^{Ms} ds, equal to M^{-1}(e^{Mt} - I) when M is invertible and
/// t*I when M = 0. Computed from the exponential of [[M, I], [0, 0]] t.
Matrix phi1(const Matrix& M, double t);

/// phi1(M, t) v without forming phi1(M, t).
Vector phi1_apply(const Matrix& M, double t, const Vector& v);

/// Q(tau) = int_0^tau e^{A s} Qc e^{A^T s} ds via vech Q = phi1(A_P, tau) vech Qc.
/// The result is symmetrized; tau < 0 throws.
Matrix noise_covariance_Q(const Matrix& A, const Matrix& Qc, double tau);

/// Frobenius-nearest PSD matrix (negative eigenvalues clamped to 0) plus
/// jitter * I.
Matrix nearest_psd(const Matrix& S, double jitter);

struct PsdRepair {
  Matrix value;
  bool repaired = false;
};

/// Symmetrizes S and returns it unchanged when a Cholesky factorization
/// succeeds; otherwise projects with nearest_psd and jitter
/// 1e-10 * trace(S) / n (floored at 1e-10 * max|S|, then 1e-300).
PsdRepair ensure_positive_definite(const Matrix& S);

/// Relative symmetry check used at API boundaries.
bool is_symmetric(const Matrix& S, double rel_tol = 1e-12);

/// (S + S^T) / 2
inline Matrix symmetrize(const Matrix& S) { return 0.5 * (S + S.transpose()); }

/// true when S is symmetric and its Cholesky factorization succeeds.
bool is_positive_definite(const Matrix& S);

/// Largest eigenvalue magnitude.
double spectral_radius(const Matrix& M);

}  // namespace cdlds
