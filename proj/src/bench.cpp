#include "cdlds/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "cdlds/errors.hpp"
#include "cdlds/simulate.hpp"

namespace cdlds {
namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void read_em_options(const json& doc, EMOptions& opts) {
  static const std::set<std::string> known = {"tol", "max_iters", "refine_A", "assume_commuting",
                                              "diagonal_Qc", "monotonicity_slack"};
  for (const auto& [key, value] : doc.items()) {
    if (!known.contains(key)) throw InvalidArgument("config: unknown em option '" + key + "'");
  }
  opts.tol = doc.value("tol", opts.tol);
  opts.max_iters = doc.value("max_iters", opts.max_iters);
  opts.refine_A = doc.value("refine_A", opts.refine_A);
  opts.assume_commuting = doc.value("assume_commuting", opts.assume_commuting);
  opts.diagonal_Qc = doc.value("diagonal_Qc", opts.diagonal_Qc);
  opts.monotonicity_slack = doc.value("monotonicity_slack", opts.monotonicity_slack);
}

// Per-replicate streams: the same replicate index gets the same seeds at
// every sweep value, so sweep points share common random numbers.
struct ReplicateSeeds {
  std::uint64_t taus, sim, H, init;
};

ReplicateSeeds replicate_seeds(std::uint64_t base, int replicate) {
  CounterRng rng(base + static_cast<std::uint64_t>(replicate));
  ReplicateSeeds s{};
  s.taus = rng();
  s.sim = rng();
  s.H = rng();
  s.init = rng();
  return s;
}

Matrix random_observation_matrix(int m, int n, std::uint64_t seed) {
  CounterRng rng(seed);
  std::normal_distribution<double> normal;
  Matrix H(m, n);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) H(i, j) = normal(rng);
  return H;
}

struct Fit {
  Matrix value;
  bool ok = false;
};

Fit fit_continuous(const ModelParams& init, const TimedObservations& data, EMOptions opts,
                   ParamSet fixed, bool want_A) {
  opts.fixed = fixed;
  try {
    const EMReport rep = run_em(init, data, opts);
    if (!rep.failure.empty() || rep.iterates.empty()) return {};
    const ModelParams& p = rep.final_params();
    const Matrix& v = want_A ? p.A : p.Qc;
    if (!v.allFinite()) return {};
    return {v, true};
  } catch (const std::exception&) {
    return {};
  }
}

struct DiscreteFit {
  DiscreteParams params;
  bool ok = false;
};

DiscreteFit fit_discrete(const DiscreteParams& init, const Matrix& obs, EMOptions opts,
                         ParamSet fixed) {
  opts.fixed = fixed;
  try {
    DiscreteEMReport rep = discrete_em(init, obs, opts);
    if (!rep.failure.empty()) return {};
    if (!rep.params.F.allFinite() || !rep.params.Q.allFinite()) return {};
    return {std::move(rep.params), true};
  } catch (const std::exception&) {
    return {};
  }
}

double quantile7(const std::vector<double>& sorted, double p) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

double parse_cell(const std::string& cell) {
  if (cell == "nan" || cell == "NaN" || cell == "-nan") return kNaN;
  std::size_t used = 0;
  const double v = std::stod(cell, &used);
  if (used != cell.size()) throw InvalidArgument("records csv: bad number '" + cell + "'");
  return v;
}

}  // namespace

double loss_dynamics_discrete(const Matrix& A_true, double tau_bar, const Matrix& F_learned) {
  return (expm(A_true, tau_bar) - F_learned).squaredNorm();
}

double loss_dynamics_continuous(const Matrix& A_true, double tau_bar, const Matrix& A_learned) {
  return (expm(A_true, tau_bar) - expm(A_learned, tau_bar)).squaredNorm();
}

double loss_covariance_discrete(const Matrix& A_true, const Matrix& B_true, double tau_bar,
                                const Matrix& Q_learned) {
  return (noise_covariance_Q(A_true, B_true, tau_bar) - Q_learned).squaredNorm();
}

double loss_covariance_continuous(const Matrix& A_true, const Matrix& B_true, double tau_bar,
                                  const Matrix& B_learned) {
  return (noise_covariance_Q(A_true, B_true, tau_bar) -
          noise_covariance_Q(A_true, B_learned, tau_bar))
      .squaredNorm();
}

ExperimentConfig ExperimentConfig::uniform_breaks_defaults() {
  ExperimentConfig c;
  c.experiment = Experiment::uniform_breaks;
  c.sweep = {1, 5, 10, 15, 20, 25, 30};
  c.T_list = {100, 70, 60, 50, 40, 30, 20};
  c.N_list = {200, 140, 120, 100, 80, 60, 40};
  return c;
}

ExperimentConfig ExperimentConfig::beta_steps_defaults() {
  ExperimentConfig c;
  c.experiment = Experiment::beta_steps;
  c.sweep = {0.5, 1, 2, 6, 10000};
  c.N = 40;
  c.scale = 0.5;
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw InvalidArgument("config: top level must be an object");
  const std::string kind = doc.value("experiment", std::string("uniform_breaks"));
  ExperimentConfig c;
  if (kind == "uniform_breaks" || kind == "uniform-breaks") {
    c = uniform_breaks_defaults();
  } else if (kind == "beta_steps" || kind == "beta-steps") {
    c = beta_steps_defaults();
  } else {
    throw InvalidArgument("config: unknown experiment '" + kind + "'");
  }
  static const std::set<std::string> known = {
      "experiment", "omega_list", "gamma_list", "T_list",   "N_list",    "N",
      "scale",      "replicates", "seed",       "threads",  "obs_dim",   "obs_noise",
      "learn_both", "em",         "discrete_em", "out"};
  try {
    for (const auto& [key, value] : doc.items()) {
      if (!known.contains(key)) throw InvalidArgument("config: unknown key '" + key + "'");
    }
    const char* sweep_key = c.experiment == Experiment::uniform_breaks ? "omega_list" : "gamma_list";
    const char* other_key = c.experiment == Experiment::uniform_breaks ? "gamma_list" : "omega_list";
    if (doc.contains(other_key)) {
      throw InvalidArgument(std::string("config: '") + other_key + "' does not apply to " + kind);
    }
    if (doc.contains(sweep_key)) c.sweep = doc[sweep_key].get<std::vector<double>>();
    if (doc.contains("T_list")) c.T_list = doc["T_list"].get<std::vector<double>>();
    if (doc.contains("N_list")) c.N_list = doc["N_list"].get<std::vector<int>>();
    c.N = doc.value("N", c.N);
    c.scale = doc.value("scale", c.scale);
    c.replicates = doc.value("replicates", c.replicates);
    c.seed = doc.value("seed", c.seed);
    c.threads = doc.value("threads", c.threads);
    c.obs_dim = doc.value("obs_dim", c.obs_dim);
    c.obs_noise = doc.value("obs_noise", c.obs_noise);
    c.learn_both = doc.value("learn_both", c.learn_both);
    c.out = doc.value("out", c.out);
    if (doc.contains("em")) read_em_options(doc["em"], c.em);
    if (doc.contains("discrete_em")) read_em_options(doc["discrete_em"], c.discrete);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  if (sweep.empty()) throw InvalidArgument("config: empty sweep list");
  if (replicates < 1) throw InvalidArgument("config: replicates must be >= 1");
  if (threads < 1) throw InvalidArgument("config: threads must be >= 1");
  if (obs_dim < 1) throw InvalidArgument("config: obs_dim must be >= 1");
  if (!(obs_noise > 0.0)) throw InvalidArgument("config: obs_noise must be > 0");
  for (const EMOptions* o : {&em, &discrete}) {
    if (!(o->tol > 0.0) || o->max_iters < 1) {
      throw InvalidArgument("config: em tol must be > 0 and max_iters >= 1");
    }
  }
  if (experiment == Experiment::uniform_breaks) {
    if (T_list.size() != sweep.size() || N_list.size() != sweep.size()) {
      throw InvalidArgument("config: omega_list, T_list and N_list lengths differ");
    }
    for (std::size_t i = 0; i < sweep.size(); ++i) {
      if (!(sweep[i] > 0.0)) throw InvalidArgument("config: omega values must be > 0");
      if (!(T_list[i] > 0.0)) throw InvalidArgument("config: T values must be > 0");
      if (N_list[i] < 2) throw InvalidArgument("config: N values must be >= 2");
    }
  } else {
    for (double g : sweep) {
      if (!(g > 0.0)) throw InvalidArgument("config: gamma values must be > 0");
    }
    if (N < 2) throw InvalidArgument("config: N must be >= 2");
    if (!(scale > 0.0)) throw InvalidArgument("config: scale must be > 0");
  }
}

LossRecord run_replicate(const ExperimentConfig& config, std::size_t sweep_index, int replicate) {
  const ReplicateSeeds seeds = replicate_seeds(config.seed, replicate);
  const ToggleSystem toggle = toggle_switch_dynamics(ToggleRates{});
  const double sweep = config.sweep.at(sweep_index);
  const int n = 2;

  Matrix A_true;
  std::vector<double> taus;
  if (config.experiment == Experiment::uniform_breaks) {
    A_true = sweep * toggle.A;
    taus = uniform_breaks(config.T_list.at(sweep_index), config.N_list.at(sweep_index), seeds.taus);
  } else {
    A_true = toggle.A / spectral_radius(toggle.A);
    taus = beta_steps(sweep, config.N, config.scale, seeds.taus);
  }
  double T = 0.0;
  for (double t : taus) T += t;
  const double tau_bar = T / static_cast<double>(taus.size());

  ModelParams truth;
  truth.A = A_true;
  truth.Qc = toggle.B;
  truth.H = random_observation_matrix(config.obs_dim, n, seeds.H);
  truth.R = config.obs_noise * Matrix::Identity(config.obs_dim, config.obs_dim);
  truth.mu0 = Vector(n);
  truth.mu0 << ToggleRates{}.r1, ToggleRates{}.r2;
  truth.P0 = Matrix::Identity(n, n);

  LossRecord rec;
  rec.sweep = sweep;
  rec.replicate = replicate;
  rec.loss_dyn_d = rec.loss_dyn_c = rec.loss_cov_d = rec.loss_cov_c = kNaN;

  const Trajectory traj = sample_trajectory(truth, times_from_gaps(taus), seeds.sim);
  const TimedObservations data(traj.times, traj.observed);

  const Matrix A_init = default_initial_A(n, 0.0, seeds.init);
  const Matrix Qc_init = default_initial_Qc(data, n);

  DiscreteParams dtruth{expm(A_true, tau_bar), noise_covariance_Q(A_true, truth.Qc, tau_bar),
                        truth.H, truth.R, truth.mu0, truth.P0};
  const ParamSet obs_fixed{Param::H, Param::R, Param::mu0, Param::P0};

  int failures = 0;
  if (config.learn_both) {
    ModelParams init = truth;
    init.A = A_init;
    init.Qc = Qc_init;
    EMOptions opts = config.em;
    opts.fixed = obs_fixed;
    try {
      const EMReport rep = run_em(init, data, opts);
      if (rep.failure.empty() && !rep.iterates.empty()) {
        rec.loss_dyn_c = loss_dynamics_continuous(A_true, tau_bar, rep.final_params().A);
        rec.loss_cov_c = loss_covariance_continuous(A_true, truth.Qc, tau_bar, rep.final_params().Qc);
      } else {
        ++failures;
      }
    } catch (const std::exception&) {
      ++failures;
    }
    DiscreteParams dinit = dtruth;
    dinit.F = expm(A_init, tau_bar);
    dinit.Q = Qc_init * tau_bar;
    const DiscreteFit d = fit_discrete(dinit, data.obs(), config.discrete, obs_fixed);
    if (d.ok) {
      rec.loss_dyn_d = loss_dynamics_discrete(A_true, tau_bar, d.params.F);
      rec.loss_cov_d = loss_covariance_discrete(A_true, truth.Qc, tau_bar, d.params.Q);
    } else {
      ++failures;
    }
    rec.failures = failures;
    return rec;
  }

  ParamSet dyn_fixed = obs_fixed;
  dyn_fixed.insert(Param::Qc);
  ParamSet cov_fixed = obs_fixed;
  cov_fixed.insert(Param::A);

  // Dynamics: learn A (F) with the noise fixed at truth.
  {
    ModelParams init = truth;
    init.A = A_init;
    const Fit c = fit_continuous(init, data, config.em, dyn_fixed, true);
    if (c.ok) rec.loss_dyn_c = loss_dynamics_continuous(A_true, tau_bar, c.value);
    else ++failures;

    DiscreteParams dinit = dtruth;
    dinit.F = expm(A_init, tau_bar);
    const DiscreteFit d = fit_discrete(dinit, data.obs(), config.discrete, dyn_fixed);
    if (d.ok) rec.loss_dyn_d = loss_dynamics_discrete(A_true, tau_bar, d.params.F);
    else ++failures;
  }
  // Covariance: learn Qc (Q) with the dynamics fixed at truth.
  {
    ModelParams init = truth;
    init.Qc = Qc_init;
    const Fit c = fit_continuous(init, data, config.em, cov_fixed, false);
    if (c.ok) rec.loss_cov_c = loss_covariance_continuous(A_true, truth.Qc, tau_bar, c.value);
    else ++failures;

    DiscreteParams dinit = dtruth;
    dinit.Q = Qc_init * tau_bar;
    const DiscreteFit d = fit_discrete(dinit, data.obs(), config.discrete, cov_fixed);
    if (d.ok) rec.loss_cov_d = loss_covariance_discrete(A_true, truth.Qc, tau_bar, d.params.Q);
    else ++failures;
  }
  rec.failures = failures;
  return rec;
}

std::vector<LossRecord> run_experiment(const ExperimentConfig& config) {
  config.validate();
  const std::size_t S = config.sweep.size();
  const auto R = static_cast<std::size_t>(config.replicates);
  const std::size_t total = S * R;
  std::vector<LossRecord> records(total);
  std::atomic<std::size_t> next{0};

  auto worker = [&] {
    for (std::size_t task = next++; task < total; task = next++) {
      const std::size_t i = task / R;
      const int r = static_cast<int>(task % R);
      try {
        records[task] = run_replicate(config, i, r);
      } catch (const std::exception&) {
        // Simulation itself failed; every fit of the replicate is lost.
        LossRecord rec;
        rec.sweep = config.sweep[i];
        rec.replicate = r;
        rec.loss_dyn_d = rec.loss_dyn_c = rec.loss_cov_d = rec.loss_cov_c = kNaN;
        rec.failures = 4;
        records[task] = rec;
      }
    }
  };
  const auto width = static_cast<std::size_t>(std::max(1, config.threads));
  if (width == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < std::min(width, total); ++t) pool.emplace_back(worker);
  }
  std::stable_sort(records.begin(), records.end(), [](const LossRecord& a, const LossRecord& b) {
    return a.sweep != b.sweep ? a.sweep < b.sweep : a.replicate < b.replicate;
  });
  return records;
}

std::vector<LossRecord> run_uniform_breaks(const ExperimentConfig& config) {
  if (config.experiment != Experiment::uniform_breaks) {
    throw InvalidArgument("run_uniform_breaks: config is for another experiment");
  }
  return run_experiment(config);
}

std::vector<LossRecord> run_beta_steps(const ExperimentConfig& config) {
  if (config.experiment != Experiment::beta_steps) {
    throw InvalidArgument("run_beta_steps: config is for another experiment");
  }
  return run_experiment(config);
}

BoxStats box_stats(std::vector<double> values) {
  std::erase_if(values, [](double v) { return std::isnan(v); });
  if (values.empty()) return {kNaN, kNaN, kNaN, kNaN, kNaN};
  std::sort(values.begin(), values.end());
  BoxStats s;
  s.median = quantile7(values, 0.5);
  s.q1 = quantile7(values, 0.25);
  s.q3 = quantile7(values, 0.75);
  const double iqr = s.q3 - s.q1;
  const double lo = s.q1 - 1.5 * iqr;
  const double hi = s.q3 + 1.5 * iqr;
  s.whisker_lo = *std::find_if(values.begin(), values.end(), [&](double v) { return v >= lo; });
  s.whisker_hi = *std::find_if(values.rbegin(), values.rend(), [&](double v) { return v <= hi; });
  return s;
}

std::vector<SummaryRow> summarize(const std::vector<LossRecord>& records) {
  std::vector<double> sweeps;
  for (const auto& r : records) sweeps.push_back(r.sweep);
  std::sort(sweeps.begin(), sweeps.end());
  sweeps.erase(std::unique(sweeps.begin(), sweeps.end()), sweeps.end());

  static const std::pair<const char*, double LossRecord::*> metrics[] = {
      {"loss_dyn_d", &LossRecord::loss_dyn_d},
      {"loss_dyn_c", &LossRecord::loss_dyn_c},
      {"loss_cov_d", &LossRecord::loss_cov_d},
      {"loss_cov_c", &LossRecord::loss_cov_c}};
  std::vector<SummaryRow> rows;
  for (double s : sweeps) {
    for (const auto& [name, field] : metrics) {
      std::vector<double> values;
      for (const auto& r : records) {
        if (r.sweep == s) values.push_back(r.*field);
      }
      rows.push_back({s, name, box_stats(std::move(values))});
    }
  }
  return rows;
}

void write_records_csv(std::ostream& out, const std::vector<LossRecord>& records) {
  out << "sweep,replicate,loss_dyn_d,loss_dyn_c,loss_cov_d,loss_cov_c,failures\n";
  for (const auto& r : records) {
    out << fmt(r.sweep) << ',' << r.replicate << ',' << fmt(r.loss_dyn_d) << ','
        << fmt(r.loss_dyn_c) << ',' << fmt(r.loss_cov_d) << ',' << fmt(r.loss_cov_c) << ','
        << r.failures << '\n';
  }
}

std::vector<LossRecord> read_records_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("records csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != "sweep,replicate,loss_dyn_d,loss_dyn_c,loss_cov_d,loss_cov_c,failures") {
    throw InvalidArgument("records csv: unexpected header '" + line + "'");
  }
  std::vector<LossRecord> records;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7) {
      throw InvalidArgument("records csv: expected 7 cells on line " + std::to_string(line_no));
    }
    try {
      LossRecord r;
      r.sweep = parse_cell(cells[0]);
      r.replicate = std::stoi(cells[1]);
      r.loss_dyn_d = parse_cell(cells[2]);
      r.loss_dyn_c = parse_cell(cells[3]);
      r.loss_cov_d = parse_cell(cells[4]);
      r.loss_cov_c = parse_cell(cells[5]);
      r.failures = std::stoi(cells[6]);
      records.push_back(r);
    } catch (const std::logic_error&) {
      throw InvalidArgument("records csv: bad value on line " + std::to_string(line_no));
    }
  }
  return records;
}

void write_summary_csv(std::ostream& out, const std::vector<SummaryRow>& rows) {
  out << "sweep,metric,median,q1,q3,wlo,whi\n";
  for (const auto& r : rows) {
    out << fmt(r.sweep) << ',' << r.metric << ',' << fmt(r.stats.median) << ',' << fmt(r.stats.q1)
        << ',' << fmt(r.stats.q3) << ',' << fmt(r.stats.whisker_lo) << ','
        << fmt(r.stats.whisker_hi) << '\n';
  }
}

}  // namespace cdlds
