// Command-line front end: simulate, fit, experiments and summaries.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cdlds/bench.hpp"
#include "cdlds/errors.hpp"
#include "cdlds/io.hpp"
#include "cdlds/simulate.hpp"

namespace fs = std::filesystem;
using namespace cdlds;

namespace {

constexpr int kConfigError = 2;
constexpr int kNumericalError = 3;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidArgument("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw InvalidArgument("cannot write '" + path.string() + "'");
  return out;
}

ModelParams toggle_model() {
  const ToggleSystem sys = toggle_switch_dynamics(ToggleRates{});
  ModelParams p;
  p.A = sys.A;
  p.Qc = sys.B;
  p.H = Matrix::Identity(2, 2);
  p.R = 0.25 * Matrix::Identity(2, 2);
  p.mu0 = Vector(2);
  p.mu0 << ToggleRates{}.r1, ToggleRates{}.r2;
  p.P0 = Matrix::Identity(2, 2);
  return p;
}

struct SimulateArgs {
  std::string config;
  std::string out;
  std::string grid = "uniform";
  double T = 100.0;
  int N = 200;
  double gamma = 1.0;
  double scale = 0.5;
  std::uint64_t seed = 1;
  bool emit_latent = false;
};

int run_simulate(const SimulateArgs& a) {
  const ModelParams params = a.config.empty() ? toggle_model() : model_params_from_json(read_file(a.config));
  require_valid(params);
  std::vector<double> taus;
  if (a.grid == "uniform") {
    taus = uniform_breaks(a.T, a.N, a.seed);
  } else if (a.grid == "beta") {
    taus = beta_steps(a.gamma, a.N, a.scale, a.seed);
  } else {
    throw InvalidArgument("unknown grid '" + a.grid + "'");
  }
  const Trajectory traj = sample_trajectory(params, times_from_gaps(taus), a.seed + 1);
  if (a.out.empty()) {
    write_trajectory_csv(std::cout, traj, a.emit_latent);
  } else {
    auto out = open_out(a.out);
    write_trajectory_csv(out, traj, a.emit_latent);
  }
  return 0;
}

struct FitArgs {
  std::string config;
  std::string data;
  std::string out;
  std::vector<std::string> fixed;
  double tol = 1e-6;
  int max_iters = 100;
  bool no_refine = false;
  bool diagonal_Qc = false;
  std::optional<std::uint64_t> seed;
};

int run_fit(const FitArgs& a) {
  std::ifstream in(a.data);
  if (!in) throw InvalidArgument("cannot open '" + a.data + "'");
  const TimedObservations data = read_observations_csv(in);
  ModelParams init = model_params_from_json(read_file(a.config));
  EMOptions opts;
  opts.tol = a.tol;
  opts.max_iters = a.max_iters;
  opts.refine_A = !a.no_refine;
  opts.diagonal_Qc = a.diagonal_Qc;
  for (const auto& name : a.fixed) opts.fixed.insert(ParamSet::parse(name));
  // With a seed, A and Qc are replaced by the default random initialization.
  if (a.seed) {
    init.A = default_initial_A(init.state_dim(), 0.0, *a.seed);
    init.Qc = default_initial_Qc(data, init.state_dim());
  }
  require_valid(init);
  const EMReport report = run_em(init, data, opts);
  const std::string doc = em_report_to_json(report);
  if (a.out.empty()) {
    std::cout << doc << '\n';
  } else {
    auto out = open_out(a.out);
    out << doc << '\n';
  }
  if (!report.failure.empty()) {
    std::cerr << "numerical abort: " << report.failure << '\n';
    return kNumericalError;
  }
  return 0;
}

struct ExperimentArgs {
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  std::optional<int> replicates;
  std::optional<int> threads;
};

int run_experiment_cmd(Experiment kind, const ExperimentArgs& a) {
  ExperimentConfig config;
  if (a.config.empty()) {
    config = kind == Experiment::uniform_breaks ? ExperimentConfig::uniform_breaks_defaults()
                                                : ExperimentConfig::beta_steps_defaults();
  } else {
    config = ExperimentConfig::from_json(read_file(a.config));
    if (config.experiment != kind) throw InvalidArgument("config is for the other experiment");
  }
  if (a.seed) config.seed = *a.seed;
  if (a.replicates) config.replicates = *a.replicates;
  if (a.threads) config.threads = *a.threads;
  if (config.out.empty() || a.out != ".") config.out = a.out;
  config.validate();

  const auto records = run_experiment(config);
  const fs::path dir(config.out);
  fs::create_directories(dir);
  {
    auto out = open_out(dir / "records.csv");
    write_records_csv(out, records);
  }
  {
    auto out = open_out(dir / "summary.csv");
    write_summary_csv(out, summarize(records));
  }
  int failures = 0;
  for (const auto& r : records) failures += r.failures;
  std::cerr << records.size() << " replicates, " << failures << " failed fits, seed "
            << config.seed << '\n';
  return 0;
}

int run_summarize(const std::string& in_path, const std::string& out_path) {
  std::ifstream in(in_path);
  if (!in) throw InvalidArgument("cannot open '" + in_path + "'");
  const auto rows = summarize(read_records_csv(in));
  if (out_path.empty()) {
    write_summary_csv(std::cout, rows);
  } else {
    auto out = open_out(out_path);
    write_summary_csv(out, rows);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continuous-discrete linear dynamical system identification"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "Sample a trajectory to CSV");
  simulate->add_option("--config", sim.config, "Model JSON (default: linearized toggle switch, H = I)");
  simulate->add_option("--out", sim.out, "Output CSV (default: stdout)");
  simulate->add_option("--grid", sim.grid, "Step sampler: uniform or beta");
  simulate->add_option("--T", sim.T, "Horizon for uniform breaks");
  simulate->add_option("--N", sim.N, "Number of gaps");
  simulate->add_option("--gamma", sim.gamma, "Beta(gamma, gamma) parameter");
  simulate->add_option("--scale", sim.scale, "Beta step scale");
  simulate->add_option("--seed", sim.seed, "Seed");
  simulate->add_flag("--emit-latent", sim.emit_latent, "Append x1..xn columns");

  FitArgs fit;
  auto* fitcmd = app.add_subcommand("fit", "Run continuous-discrete EM on a CSV");
  fitcmd->add_option("--config", fit.config, "Initial model JSON")->required();
  fitcmd->add_option("--data", fit.data, "Observations CSV")->required();
  fitcmd->add_option("--out", fit.out, "Report JSON (default: stdout)");
  fitcmd->add_option("--fix", fit.fixed, "Parameters to hold fixed (A, Qc, H, R, mu0, P0)");
  fitcmd->add_option("--tol", fit.tol, "Log-likelihood tolerance");
  fitcmd->add_option("--max-iters", fit.max_iters, "Iteration cap");
  fitcmd->add_flag("--no-refine", fit.no_refine, "Skip Newton-CG refinement of A");
  fitcmd->add_flag("--diagonal-qc", fit.diagonal_Qc, "Constrain Qc to be diagonal");
  fitcmd->add_option("--seed", fit.seed, "Randomly initialize A and Qc from this seed");

  auto* experiment = app.add_subcommand("experiment", "Monte-Carlo comparisons");
  experiment->require_subcommand(1);
  ExperimentArgs uni;
  ExperimentArgs beta;
  for (auto [name, args] : {std::pair{"uniform-breaks", &uni}, std::pair{"beta-steps", &beta}}) {
    auto* sub = experiment->add_subcommand(name);
    sub->add_option("--config", args->config, "Experiment JSON");
    sub->add_option("--out", args->out, "Output directory");
    sub->add_option("--seed", args->seed, "Base seed");
    sub->add_option("--replicates", args->replicates, "Replicates per sweep value");
    sub->add_option("--threads", args->threads, "Worker threads");
  }

  std::string sum_in;
  std::string sum_out;
  auto* summarize_cmd = app.add_subcommand("summarize", "Box statistics from records.csv");
  summarize_cmd->add_option("--in", sum_in, "records.csv")->required();
  summarize_cmd->add_option("--out", sum_out, "summary.csv (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*simulate) return run_simulate(sim);
    if (*fitcmd) return run_fit(fit);
    if (*summarize_cmd) return run_summarize(sum_in, sum_out);
    if (experiment->got_subcommand("uniform-breaks")) {
      return run_experiment_cmd(Experiment::uniform_breaks, uni);
    }
    return run_experiment_cmd(Experiment::beta_steps, beta);
  } catch (const InvalidArgument& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const NumericalError& e) {
    std::cerr << "numerical abort: " << e.what() << '\n';
    return kNumericalError;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  }
}
