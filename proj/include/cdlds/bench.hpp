#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "cdlds/discrete_em.hpp"
#include "cdlds/em.hpp"

namespace cdlds {

/// ||e^{A_true tau} - F||_F^2
double loss_dynamics_discrete(const Matrix& A_true, double tau_bar, const Matrix& F_learned);

/// ||e^{A_true tau} - e^{A_learned tau}||_F^2
double loss_dynamics_continuous(const Matrix& A_true, double tau_bar, const Matrix& A_learned);

/// ||Q(tau; A_true, B_true) - Q_learned||_F^2
double loss_covariance_discrete(const Matrix& A_true, const Matrix& B_true, double tau_bar,
                                const Matrix& Q_learned);

/// ||Q(tau; A_true, B_true) - Q(tau; A_true, B_learned)||_F^2
double loss_covariance_continuous(const Matrix& A_true, const Matrix& B_true, double tau_bar,
                                  const Matrix& B_learned);

enum class Experiment { uniform_breaks, beta_steps };

struct ExperimentConfig {
  Experiment experiment = Experiment::uniform_breaks;
  std::vector<double> sweep;   // omega_list or gamma_list
  std::vector<double> T_list;  // uniform breaks: horizon per sweep value
  std::vector<int> N_list;     // uniform breaks: gap count per sweep value
  int N = 40;                  // beta steps: gap count
  double scale = 0.5;          // beta steps: tau = scale * Beta(gamma, gamma)
  int replicates = 100;
  std::uint64_t seed = 1;
  int threads = 1;
  int obs_dim = 6;
  double obs_noise = 0.25;  // R = obs_noise * I
  bool learn_both = false;  // one run learning A and Qc together
  EMOptions em;             // continuous engine
  EMOptions discrete;       // baseline; fixed sets are set per protocol
  std::string out;

  /// Default sweeps: omega {1,5,...,30} with T {100,...,20}, N = 2T.
  static ExperimentConfig uniform_breaks_defaults();
  /// gamma {1/2, 1, 2, 6, 10000}, N = 40, scale = 1/2.
  static ExperimentConfig beta_steps_defaults();

  /// Parses a JSON document; unknown keys and inconsistent lists throw InvalidArgument.
  static ExperimentConfig from_json(const std::string& text);

  /// Throws InvalidArgument when list lengths disagree or values are out of range.
  void validate() const;
};

struct LossRecord {
  double sweep = 0.0;
  int replicate = 0;
  double loss_dyn_d = 0.0;
  double loss_dyn_c = 0.0;
  double loss_cov_d = 0.0;
  double loss_cov_c = 0.0;
  int failures = 0;  // failed fits in this replicate; their losses are NaN
};

/// One replicate of either experiment at sweep index i.
LossRecord run_replicate(const ExperimentConfig& config, std::size_t sweep_index, int replicate);

/// All (sweep value, replicate) pairs on config.threads workers, sorted by
/// (sweep value, replicate).
std::vector<LossRecord> run_experiment(const ExperimentConfig& config);

std::vector<LossRecord> run_uniform_breaks(const ExperimentConfig& config);
std::vector<LossRecord> run_beta_steps(const ExperimentConfig& config);

struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double whisker_lo = 0.0;  // smallest value >= q1 - 1.5 IQR
  double whisker_hi = 0.0;  // largest value <= q3 + 1.5 IQR
};

/// Type-7 quartiles. NaNs are dropped; an empty input gives all NaN.
BoxStats box_stats(std::vector<double> values);

struct SummaryRow {
  double sweep = 0.0;
  std::string metric;  // loss_dyn_d, loss_dyn_c, loss_cov_d or loss_cov_c
  BoxStats stats;
};

std::vector<SummaryRow> summarize(const std::vector<LossRecord>& records);

void write_records_csv(std::ostream& out, const std::vector<LossRecord>& records);
std::vector<LossRecord> read_records_csv(std::istream& in);
void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows);

}  // namespace cdlds
