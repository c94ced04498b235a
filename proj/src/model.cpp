#include "cdlds/model.hpp"

#include <sstream>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

std::string shape(const Matrix& M) {
  std::ostringstream os;
  os << M.rows() << "x" << M.cols();
  return os.str();
}

void check_spd(const Matrix& M, const char* name, std::vector<std::string>& errors) {
  if (!M.allFinite()) {
    errors.push_back(std::string(name) + " has non-finite entries");
    return;
  }
  if (!is_symmetric(M, 1e-12)) {
    errors.push_back(std::string(name) + " not symmetric");
    return;
  }
  if (!is_positive_definite(M)) errors.push_back(std::string(name) + " not positive definite");
}

}  // namespace

std::vector<std::string> validate(const ModelParams& p) {
  std::vector<std::string> errors;
  const auto n = p.A.rows();
  if (n < 1 || p.A.cols() != n) {
    errors.push_back("A must be square and non-empty, got " + shape(p.A));
    return errors;
  }
  if (!p.A.allFinite()) errors.push_back("A has non-finite entries");

  if (p.Qc.rows() != n || p.Qc.cols() != n) {
    errors.push_back("Qc must be " + shape(p.A) + ", got " + shape(p.Qc));
  } else {
    check_spd(p.Qc, "Qc", errors);
  }
  if (p.P0.rows() != n || p.P0.cols() != n) {
    errors.push_back("P0 must be " + shape(p.A) + ", got " + shape(p.P0));
  } else {
    check_spd(p.P0, "P0", errors);
  }
  if (p.mu0.size() != n) {
    errors.push_back("mu0 must have length " + std::to_string(n) + ", got " +
                     std::to_string(p.mu0.size()));
  } else if (!p.mu0.allFinite()) {
    errors.push_back("mu0 has non-finite entries");
  }

  const auto m = p.H.rows();
  if (m < 1 || p.H.cols() != n) {
    errors.push_back("H dimension mismatch: expected m x " + std::to_string(n) + ", got " +
                     shape(p.H));
  } else {
    if (!p.H.allFinite()) errors.push_back("H has non-finite entries");
    if (p.R.rows() != m || p.R.cols() != m) {
      errors.push_back("R must be " + std::to_string(m) + "x" + std::to_string(m) + ", got " +
                       shape(p.R));
    } else {
      check_spd(p.R, "R", errors);
    }
  }
  return errors;
}

void require_valid(const ModelParams& params) {
  const auto errors = validate(params);
  if (errors.empty()) return;
  std::string msg = "invalid model parameters:";
  for (const auto& e : errors) msg += "\n  " + e;
  throw InvalidArgument(msg);
}

void require_consistent_shapes(const ModelParams& p) {
  const auto n = p.A.rows();
  const auto m = p.H.rows();
  const bool ok = n >= 1 && p.A.cols() == n && p.Qc.rows() == n && p.Qc.cols() == n &&
                  p.P0.rows() == n && p.P0.cols() == n && p.mu0.size() == n && m >= 1 &&
                  p.H.cols() == n && p.R.rows() == m && p.R.cols() == m;
  if (!ok) {
    throw InvalidArgument("inconsistent model shapes: A " + shape(p.A) + ", Qc " + shape(p.Qc) +
                          ", H " + shape(p.H) + ", R " + shape(p.R) + ", P0 " + shape(p.P0) +
                          ", mu0 " + std::to_string(p.mu0.size()));
  }
  if (!p.A.allFinite() || !p.Qc.allFinite() || !p.H.allFinite() || !p.R.allFinite() ||
      !p.mu0.allFinite() || !p.P0.allFinite()) {
    throw InvalidArgument("model parameters contain non-finite entries");
  }
}

TimedObservations::TimedObservations(Vector times, Matrix obs)
    : times_(std::move(times)), obs_(std::move(obs)) {
  if (times_.size() < 1) throw InvalidArgument("TimedObservations: no observations");
  if (obs_.rows() != times_.size()) {
    throw InvalidArgument("TimedObservations: " + std::to_string(times_.size()) +
                          " timestamps but " + std::to_string(obs_.rows()) + " observation rows");
  }
  if (obs_.cols() < 1) throw InvalidArgument("TimedObservations: zero-dimensional observations");
  if (!times_.allFinite() || !obs_.allFinite()) {
    throw InvalidArgument("TimedObservations: non-finite entries");
  }
  taus_.resize(times_.size() - 1);
  for (Eigen::Index k = 1; k < times_.size(); ++k) {
    taus_(k - 1) = times_(k) - times_(k - 1);
    if (!(taus_(k - 1) > 0.0)) {
      throw InvalidArgument("TimedObservations: timestamps not strictly increasing at row " +
                            std::to_string(k));
    }
  }
}

DiscretizedStep discretize(const Matrix& A, const Matrix& Qc, double tau) {
  if (!(tau > 0.0)) throw InvalidArgument("discretize: tau must be > 0");
  return {expm(A, tau), noise_covariance_Q(A, Qc, tau)};
}

}  // namespace cdlds
