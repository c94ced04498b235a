#include "cdlds/io.hpp"

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cdlds/errors.hpp"

namespace cdlds {
namespace {

using nlohmann::json;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_header(std::ostream& out, int m, int n) {
  out << 't';
  for (int j = 1; j <= m; ++j) out << ",z" << j;
  for (int j = 1; j <= n; ++j) out << ",x" << j;
  out << '\n';
}

void write_rows(std::ostream& out, const Vector& times, const Matrix& obs, const Matrix* latent) {
  for (Eigen::Index k = 0; k < times.size(); ++k) {
    out << fmt(times(k));
    for (Eigen::Index j = 0; j < obs.cols(); ++j) out << ',' << fmt(obs(k, j));
    if (latent) {
      for (Eigen::Index j = 0; j < latent->cols(); ++j) out << ',' << fmt((*latent)(k, j));
    }
    out << '\n';
  }
}

std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

double parse_double(const std::string& cell, std::size_t line_no) {
  std::size_t b = cell.find_first_not_of(" \t\r");
  std::size_t e = cell.find_last_not_of(" \t\r");
  if (b == std::string::npos) {
    throw InvalidArgument("observations csv: empty cell on line " + std::to_string(line_no));
  }
  double v = 0.0;
  const char* first = cell.data() + b;
  const char* last = cell.data() + e + 1;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw InvalidArgument("observations csv: bad number '" + cell + "' on line " +
                          std::to_string(line_no));
  }
  return v;
}

json matrix_json(const Matrix& M) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < M.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < M.cols(); ++j) row.push_back(M(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_json(const Vector& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Matrix matrix_from(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array() || doc[key].empty()) {
    throw InvalidArgument(std::string("model json: missing matrix '") + key + "'");
  }
  const json& rows = doc[key];
  const auto r = static_cast<Eigen::Index>(rows.size());
  const auto c = static_cast<Eigen::Index>(rows[0].is_array() ? rows[0].size() : 0);
  Matrix M(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const json& row = rows[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) {
      throw InvalidArgument(std::string("model json: ragged matrix '") + key + "'");
    }
    for (Eigen::Index j = 0; j < c; ++j) M(i, j) = row[static_cast<std::size_t>(j)].get<double>();
  }
  return M;
}

Vector vector_from(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array()) {
    throw InvalidArgument(std::string("model json: missing vector '") + key + "'");
  }
  const json& arr = doc[key];
  Vector v(static_cast<Eigen::Index>(arr.size()));
  for (std::size_t i = 0; i < arr.size(); ++i) v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
  return v;
}

json params_json(const ModelParams& p) {
  return json{{"A", matrix_json(p.A)},   {"Qc", matrix_json(p.Qc)}, {"H", matrix_json(p.H)},
              {"R", matrix_json(p.R)},   {"mu0", vector_json(p.mu0)},
              {"P0", matrix_json(p.P0)}};
}

}  // namespace

void write_observations_csv(std::ostream& out, const TimedObservations& data) {
  write_header(out, data.obs_dim(), 0);
  write_rows(out, data.times(), data.obs(), nullptr);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, bool emit_latent) {
  const int n = emit_latent ? static_cast<int>(traj.latent.cols()) : 0;
  write_header(out, static_cast<int>(traj.observed.cols()), n);
  write_rows(out, traj.times, traj.observed, emit_latent ? &traj.latent : nullptr);
}

TimedObservations read_observations_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InvalidArgument("observations csv: empty input");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line);
  if (header.empty() || header[0] != "t") {
    throw InvalidArgument("observations csv: header must start with 't'");
  }
  int m = 0;
  while (m + 1 < static_cast<int>(header.size()) &&
         header[static_cast<std::size_t>(m) + 1] == "z" + std::to_string(m + 1)) {
    ++m;
  }
  if (m == 0) throw InvalidArgument("observations csv: no z1..zm columns");

  std::vector<double> t;
  std::vector<double> z;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line);
    if (cells.size() != header.size()) {
      throw InvalidArgument("observations csv: expected " + std::to_string(header.size()) +
                            " cells on line " + std::to_string(line_no));
    }
    t.push_back(parse_double(cells[0], line_no));
    for (int j = 1; j <= m; ++j) z.push_back(parse_double(cells[static_cast<std::size_t>(j)], line_no));
  }
  const auto N = static_cast<Eigen::Index>(t.size());
  if (N == 0) throw InvalidArgument("observations csv: no rows");
  Vector times = Eigen::Map<const Vector>(t.data(), N);
  Matrix obs = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
      z.data(), N, m);
  return TimedObservations(std::move(times), std::move(obs));
}

std::string model_params_to_json(const ModelParams& params) {
  return params_json(params).dump(2);
}

ModelParams model_params_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model json: ") + e.what());
  }
  ModelParams p;
  try {
    p.A = matrix_from(doc, "A");
    p.Qc = matrix_from(doc, "Qc");
    p.H = matrix_from(doc, "H");
    p.R = matrix_from(doc, "R");
    p.mu0 = vector_from(doc, "mu0");
    p.P0 = matrix_from(doc, "P0");
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("model json: ") + e.what());
  }
  return p;
}

std::string em_report_to_json(const EMReport& report) {
  json doc;
  doc["loglik_initial"] = report.loglik_initial;
  doc["loglik_trace"] = report.loglik_trace;
  doc["converged"] = report.converged;
  doc["iterations"] = report.iterations;
  doc["monotonicity_violations"] = report.monotonicity_violations;
  doc["warnings"] = report.warnings;
  doc["failure"] = report.failure;
  if (!report.iterates.empty()) doc["params"] = params_json(report.final_params());
  return doc.dump(2);
}

}  // namespace cdlds
