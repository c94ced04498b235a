#include "cdlds/matexp.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Eigenvalues>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

// Pade coefficients b_0..b_m for the diagonal [m/m] approximant of exp.
constexpr std::array<double, 4> kPade3 = {120., 60., 12., 1.};
constexpr std::array<double, 6> kPade5 = {30240., 15120., 3360., 420., 30., 1.};
constexpr std::array<double, 8> kPade7 = {17297280., 8648640., 1995840., 277200.,
                                          25200.,    1512.,    56.,      1.};
constexpr std::array<double, 10> kPade9 = {17643225600., 8821612800., 2075673600., 302702400.,
                                           30270240.,    2162160.,    110880.,     3960.,
                                           90.,          1.};
constexpr std::array<double, 14> kPade13 = {
    64764752532480000., 32382376266240000., 7771770303897600., 1187353796428800.,
    129060195264000.,   10559470521600.,    670442572800.,    33522128640.,
    1323241920.,        40840800.,          960960.,          16380.,
    182.,               1.};

// 1-norm thresholds below which the [m/m] approximant is accurate to unit
// roundoff for exp alone (Higham 2005) and for exp plus its Frechet
// derivative (Al-Mohy & Higham 2009).
constexpr std::array<double, 5> kThetaExp = {1.495585217958292e-2, 2.539398330063230e-1,
                                             9.504178996162932e-1, 2.097847961257068e0,
                                             5.371920351148152e0};
constexpr std::array<double, 5> kThetaFrechet = {1.08e-2, 2.00e-1, 7.83e-1, 1.78e0, 4.74e0};
constexpr std::array<int, 4> kOrders = {3, 5, 7, 9};

struct PadeTerms {
  Matrix U, V, Lu, Lv;
};

// U, V with r_m(A) = (V - U)^{-1} (V + U); Lu, Lv their directional
// derivatives along E when with_frechet is set.
PadeTerms pade_terms(const Matrix& A, const Matrix& E, int m, bool with_frechet) {
  const Eigen::Index n = A.rows();
  const Matrix I = Matrix::Identity(n, n);
  PadeTerms t;
  const Matrix A2 = A * A;
  Matrix M2;
  if (with_frechet) M2 = A * E + E * A;

  if (m == 13) {
    const auto& b = kPade13;
    const Matrix A4 = A2 * A2;
    const Matrix A6 = A2 * A4;
    const Matrix W1 = b[13] * A6 + b[11] * A4 + b[9] * A2;
    const Matrix W2 = b[7] * A6 + b[5] * A4 + b[3] * A2 + b[1] * I;
    const Matrix Z1 = b[12] * A6 + b[10] * A4 + b[8] * A2;
    const Matrix Z2 = b[6] * A6 + b[4] * A4 + b[2] * A2 + b[0] * I;
    const Matrix W = A6 * W1 + W2;
    t.U = A * W;
    t.V = A6 * Z1 + Z2;
    if (with_frechet) {
      const Matrix M4 = A2 * M2 + M2 * A2;
      const Matrix M6 = A4 * M2 + M4 * A2;
      const Matrix Lw1 = b[13] * M6 + b[11] * M4 + b[9] * M2;
      const Matrix Lw2 = b[7] * M6 + b[5] * M4 + b[3] * M2;
      const Matrix Lz1 = b[12] * M6 + b[10] * M4 + b[8] * M2;
      const Matrix Lz2 = b[6] * M6 + b[4] * M4 + b[2] * M2;
      const Matrix Lw = A6 * Lw1 + M6 * W1 + Lw2;
      t.Lu = A * Lw + E * W;
      t.Lv = A6 * Lz1 + M6 * Z1 + Lz2;
    }
    return t;
  }

  // Orders 3..9 share one shape: U = A * sum_odd b_j A^{j-1}, V = sum_even b_j A^j.
  const double* b = m == 3 ? kPade3.data()
                  : m == 5 ? kPade5.data()
                  : m == 7 ? kPade7.data()
                           : kPade9.data();
  std::vector<Matrix> powers{I, A2};  // A^0, A^2, A^4, ...
  std::vector<Matrix> dpowers;        // derivatives of A^{2j}
  if (with_frechet) {
    dpowers.push_back(Matrix::Zero(n, n));
    dpowers.push_back(M2);
  }
  for (int j = 2; 2 * j <= m; ++j) {
    powers.push_back(powers[j - 1] * A2);
    if (with_frechet) {
      // d(A^{2j}) = A^{2(j-1)} dA^2 + d(A^{2(j-1)}) A^2
      dpowers.push_back(powers[j - 1] * M2 + dpowers[j - 1] * A2);
    }
  }
  Matrix odd = Matrix::Zero(n, n);
  Matrix even = Matrix::Zero(n, n);
  Matrix dodd = Matrix::Zero(n, n);
  Matrix deven = Matrix::Zero(n, n);
  for (int j = 0; 2 * j <= m; ++j) {
    even += b[2 * j] * powers[j];
    if (2 * j + 1 <= m) odd += b[2 * j + 1] * powers[j];
    if (with_frechet) {
      deven += b[2 * j] * dpowers[j];
      if (2 * j + 1 <= m) dodd += b[2 * j + 1] * dpowers[j];
    }
  }
  t.U = A * odd;
  t.V = even;
  if (with_frechet) {
    t.Lu = A * dodd + E * odd;
    t.Lv = deven;
  }
  return t;
}

void require_finite(const Matrix& M, const char* what) {
  if (!M.allFinite()) throw InvalidArgument(std::string(what) + ": non-finite entries");
}

void require_square(const Matrix& M, const char* what) {
  if (M.rows() != M.cols() || M.rows() < 1) {
    throw InvalidArgument(std::string(what) + ": expected a non-empty square matrix");
  }
}

// Scaling-and-squaring driver shared by expm and expm_frechet.
ExpmFrechet scaled_pade(const Matrix& A, const Matrix& E, bool with_frechet) {
  const auto& theta = with_frechet ? kThetaFrechet : kThetaExp;
  const double norm1 = A.cwiseAbs().colwise().sum().maxCoeff();

  int order = 13;
  int squarings = 0;
  for (std::size_t i = 0; i < kOrders.size(); ++i) {
    if (norm1 <= theta[i]) {
      order = kOrders[i];
      break;
    }
  }
  Matrix As = A;
  Matrix Es = E;
  if (order == 13 && norm1 > theta[4]) {
    squarings = std::max(0, static_cast<int>(std::ceil(std::log2(norm1 / theta[4]))));
    const double scale = std::ldexp(1.0, -squarings);
    As *= scale;
    if (with_frechet) Es *= scale;
  }

  const PadeTerms p = pade_terms(As, Es, order, with_frechet);
  const Eigen::PartialPivLU<Matrix> lu(p.V - p.U);
  ExpmFrechet out;
  out.exp = lu.solve(p.V + p.U);
  if (with_frechet) out.frechet = lu.solve(p.Lu + p.Lv + (p.Lu - p.Lv) * out.exp);
  for (int k = 0; k < squarings; ++k) {
    if (with_frechet) out.frechet = out.exp * out.frechet + out.frechet * out.exp;
    out.exp = out.exp * out.exp;
  }
  return out;
}

// Column-major lower-triangular position of (i, j), i >= j.
int vech_index(int n, int i, int j) { return j * n - j * (j - 1) / 2 + (i - j); }

}  // namespace

Matrix expm(const Matrix& M, double t) {
  require_square(M, "expm");
  if (!std::isfinite(t)) throw InvalidArgument("expm: non-finite time");
  require_finite(M, "expm");
  const Matrix X = M * t;
  if (X.isZero(0.0)) return Matrix::Identity(M.rows(), M.cols());
  return scaled_pade(X, Matrix(), false).exp;
}

ExpmFrechet expm_frechet(const Matrix& M, const Matrix& V) {
  require_square(M, "expm_frechet");
  if (V.rows() != M.rows() || V.cols() != M.cols()) {
    throw InvalidArgument("expm_frechet: direction has a different shape than the matrix");
  }
  require_finite(M, "expm_frechet");
  require_finite(V, "expm_frechet");
  return scaled_pade(M, V, true);
}

Matrix duplication_matrix(int n) {
  if (n < 1) throw InvalidArgument("duplication_matrix: n must be >= 1");
  Matrix D = Matrix::Zero(n * n, half_size(n));
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      const int h = vech_index(n, i, j);
      D(i + j * n, h) = 1.0;
      D(j + i * n, h) = 1.0;
    }
  }
  return D;
}

Matrix elimination_matrix(int n) {
  if (n < 1) throw InvalidArgument("elimination_matrix: n must be >= 1");
  Matrix E = Matrix::Zero(half_size(n), n * n);
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      const int h = vech_index(n, i, j);
      if (i == j) {
        E(h, i + j * n) = 1.0;
      } else {
        E(h, i + j * n) = 0.5;
        E(h, j + i * n) = 0.5;
      }
    }
  }
  return E;
}

bool is_symmetric(const Matrix& S, double rel_tol) {
  if (S.rows() != S.cols()) return false;
  const double scale = S.cwiseAbs().maxCoeff();
  const double asym = (S - S.transpose()).cwiseAbs().maxCoeff();
  return asym <= rel_tol * scale;
}

Vector vech(const Matrix& S) {
  require_square(S, "vech");
  if (!is_symmetric(S)) throw InvalidArgument("vech: input is not symmetric");
  const int n = static_cast<int>(S.rows());
  Vector h(half_size(n));
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) h(vech_index(n, i, j)) = S(i, j);
  }
  return h;
}

Matrix unvech(const Vector& h) {
  const auto len = h.size();
  const int n = static_cast<int>(std::lround((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
  if (len < 1 || half_size(n) != len) {
    throw InvalidArgument("unvech: length is not a triangular number");
  }
  Matrix S(n, n);
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      S(i, j) = h(vech_index(n, i, j));
      S(j, i) = S(i, j);
    }
  }
  return S;
}

Matrix build_AP(const Matrix& A) {
  require_square(A, "build_AP");
  require_finite(A, "build_AP");
  const int n = static_cast<int>(A.rows());
  // Column h of A_P is vech(A S_h + S_h A^T) for the symmetric basis
  // element S_h; this equals D+ (I (x) A + A (x) I) D without the n^2 x n^2
  // Kronecker sum.
  Matrix AP(half_size(n), half_size(n));
  for (int j = 0; j < n; ++j) {
    for (int i = j; i < n; ++i) {
      Matrix S = Matrix::Zero(n, n);
      S(i, j) = 1.0;
      S(j, i) = 1.0;
      const Matrix G = A * S + S * A.transpose();
      for (int q = 0; q < n; ++q) {
        for (int p = q; p < n; ++p) AP(vech_index(n, p, q), vech_index(n, i, j)) = G(p, q);
      }
    }
  }
  return AP;
}

Matrix phi1(const Matrix& M, double t) {
  require_square(M, "phi1");
  if (!(t >= 0.0)) throw InvalidArgument("phi1: t must be >= 0");
  const Eigen::Index k = M.rows();
  Matrix aug = Matrix::Zero(2 * k, 2 * k);
  aug.topLeftCorner(k, k) = M;
  aug.topRightCorner(k, k).setIdentity();
  return expm(aug, t).topRightCorner(k, k);
}

Vector phi1_apply(const Matrix& M, double t, const Vector& v) {
  require_square(M, "phi1_apply");
  if (!(t >= 0.0)) throw InvalidArgument("phi1_apply: t must be >= 0");
  if (v.size() != M.rows()) throw InvalidArgument("phi1_apply: vector length mismatch");
  const Eigen::Index k = M.rows();
  Matrix aug = Matrix::Zero(k + 1, k + 1);
  aug.topLeftCorner(k, k) = M;
  aug.topRightCorner(k, 1) = v;
  return expm(aug, t).topRightCorner(k, 1);
}

Matrix noise_covariance_Q(const Matrix& A, const Matrix& Qc, double tau) {
  require_square(A, "noise_covariance_Q");
  if (Qc.rows() != A.rows() || Qc.cols() != A.cols()) {
    throw InvalidArgument("noise_covariance_Q: Qc and A differ in size");
  }
  if (!(tau >= 0.0)) throw InvalidArgument("noise_covariance_Q: tau must be >= 0");
  if (tau == 0.0) return Matrix::Zero(A.rows(), A.cols());
  const Vector q = phi1_apply(build_AP(A), tau, vech(symmetrize(Qc)));
  return unvech(q);
}

Matrix nearest_psd(const Matrix& S, double jitter) {
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(symmetrize(S));
  const Vector clamped = eig.eigenvalues().cwiseMax(0.0);
  Matrix out = eig.eigenvectors() * clamped.asDiagonal() * eig.eigenvectors().transpose();
  out = symmetrize(out);
  out.diagonal().array() += jitter;
  return out;
}

bool is_positive_definite(const Matrix& S) {
  if (S.rows() != S.cols() || !S.allFinite()) return false;
  if (!is_symmetric(S, 1e-10)) return false;
  const Eigen::LLT<Matrix> llt(S);
  return llt.info() == Eigen::Success;
}

PsdRepair ensure_positive_definite(const Matrix& S) {
  PsdRepair out{symmetrize(S), false};
  const Eigen::LLT<Matrix> llt(out.value);
  if (llt.info() == Eigen::Success) return out;
  const double n = static_cast<double>(S.rows());
  double jitter = 1e-10 * out.value.trace() / n;
  if (!(jitter > 0.0)) jitter = 1e-10 * out.value.cwiseAbs().maxCoeff();
  if (!(jitter > 0.0)) jitter = 1e-300;
  out.value = nearest_psd(out.value, jitter);
  out.repaired = true;
  return out;
}

double spectral_radius(const Matrix& M) {
  require_square(M, "spectral_radius");
  const Eigen::EigenSolver<Matrix> es(M, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

}  // namespace cdlds
