#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "jmstate/dataset.hpp"
#include "jmstate/graph.hpp"

namespace jmstate::io {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Canonical number formatting

/// 17 significant digits: reparses to the identical double. Missing values
/// (NaN) are written as an empty cell.
inline std::string fmt(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------------------
// CSV reading

struct CsvRow {
  std::size_t line = 0;  // 1-based, counting the header
  std::vector<std::string> cells;
};

struct CsvTable {
  std::string name;
  std::vector<std::string> header;
  std::vector<CsvRow> rows;

  std::string where(std::size_t line) const { return name + ":" + std::to_string(line) + ": "; }

  std::size_t column(const std::string& col) const {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == col) return c;
    throw ValidationError(name + ": missing column '" + col + "'");
  }
};

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  out.push_back(cell);
  return out;
}

inline CsvTable read_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  CsvTable t;
  t.name = path.filename().string();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
      t.header = split_csv_line(line);
      continue;
    }
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    if (cells.size() != t.header.size())
      throw ValidationError(t.where(lineno) + "expected " + std::to_string(t.header.size()) + " cells, got " +
                            std::to_string(cells.size()));
    t.rows.push_back({lineno, std::move(cells)});
  }
  if (lineno == 0) throw ValidationError(t.name + ": missing header row");
  return t;
}

/// Parses a numeric cell; the empty cell is NaN (missing).
inline double parse_number(const std::string& s, const std::string& where) {
  if (s.empty()) return std::nan("");
  double v = 0.0;
  std::string_view sv(s);
  if (!sv.empty() && sv.front() == '+') sv.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(sv.data(), sv.data() + sv.size(), v);
  if (ec != std::errc() || ptr != sv.data() + sv.size()) {
    if (ec == std::errc::result_out_of_range) return v;
    throw ValidationError(where + "cannot parse '" + s + "' as a number");
  }
  return v;
}

/// State cell: an index, or a graph label.
inline State parse_state(const std::string& s, const TransitionGraph& graph, const std::string& where) {
  unsigned long long v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (!s.empty() && ec == std::errc() && ptr == s.data() + s.size()) {
    if (!graph.valid_state(v)) throw ValidationError(where + "state " + s + " out of range");
    return static_cast<State>(v);
  }
  for (State k = 0; k < graph.num_states(); ++k)
    if (!graph.labels().empty() && graph.labels()[k] == s) return k;
  throw ValidationError(where + "cannot parse state '" + s + "'");
}

// ---------------------------------------------------------------------------
// CSV writing

class CsvWriter {
 public:
  explicit CsvWriter(const fs::path& path) : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void row(const std::vector<std::string>& cells) {
    for (std::size_t c = 0; c < cells.size(); ++c) {
      if (c) out_ << ',';
      out_ << cells[c];
    }
    out_ << '\n';
  }
  ~CsvWriter() { out_.flush(); }

 private:
  std::ofstream out_;
};

inline void check_id(const std::string& id) {
  if (id.find_first_of(",\n\r") != std::string::npos)
    throw ValidationError("individual id '" + id + "' contains a comma or newline");
}

// ---------------------------------------------------------------------------
// Cohort files

inline const char* const kCohortFiles[] = {"covariates.csv", "longitudinal.csv", "trajectories.csv",
                                           "censoring.csv"};

inline void write_cohort(const fs::path& dir, const Cohort& c) {
  fs::create_directories(dir);
  {
    CsvWriter w(dir / "covariates.csv");
    std::vector<std::string> h{"id"};
    for (std::size_t k = 0; k < c.covariate_dim; ++k) h.push_back("x" + std::to_string(k + 1));
    w.row(h);
    for (const auto& r : c.individuals) {
      check_id(r.id);
      std::vector<std::string> row{r.id};
      for (Eigen::Index k = 0; k < r.covariates.size(); ++k) row.push_back(fmt(r.covariates[k]));
      w.row(row);
    }
  }
  {
    CsvWriter w(dir / "longitudinal.csv");
    std::vector<std::string> h{"id", "time"};
    for (std::size_t k = 0; k < c.biomarker_dim; ++k) h.push_back("y" + std::to_string(k + 1));
    w.row(h);
    for (const auto& r : c.individuals)
      for (std::size_t j = 0; j < r.measurement_times.size(); ++j) {
        std::vector<std::string> row{r.id, fmt(r.measurement_times[j])};
        for (Eigen::Index k = 0; k < r.measurements.cols(); ++k)
          row.push_back(fmt(r.measurements(static_cast<Eigen::Index>(j), k)));
        w.row(row);
      }
  }
  {
    CsvWriter w(dir / "trajectories.csv");
    w.row({"id", "time", "state"});
    for (const auto& r : c.individuals)
      for (const auto& pr : r.trajectory) w.row({r.id, fmt(pr.time), std::to_string(pr.state)});
  }
  {
    CsvWriter w(dir / "censoring.csv");
    w.row({"id", "ctime"});
    for (const auto& r : c.individuals) w.row({r.id, fmt(r.censoring_time)});
  }
}

/// Reads the four cohort files. Individuals follow the order of
/// censoring.csv, which must list every id exactly once. Structural
/// problems are reported with the file and line that caused them.
inline Cohort read_cohort(const fs::path& dir, const TransitionGraph& graph) {
  Cohort c;
  std::map<std::string, std::size_t> index;

  auto cens = read_csv(dir / "censoring.csv");
  const std::size_t cid = cens.column("id"), cct = cens.column("ctime");
  for (const auto& row : cens.rows) {
    const auto& id = row.cells[cid];
    if (id.empty()) throw ValidationError(cens.where(row.line) + "empty id");
    if (index.count(id)) throw ValidationError(cens.where(row.line) + "duplicate id '" + id + "'");
    index[id] = c.individuals.size();
    IndividualRecord r;
    r.id = id;
    r.censoring_time = parse_number(row.cells[cct], cens.where(row.line));
    if (std::isnan(r.censoring_time)) throw ValidationError(cens.where(row.line) + "missing censoring time");
    c.individuals.push_back(std::move(r));
  }
  auto find = [&](const CsvTable& t, const CsvRow& row, std::size_t col) -> IndividualRecord& {
    auto it = index.find(row.cells[col]);
    if (it == index.end())
      throw ValidationError(t.where(row.line) + "unknown id '" + row.cells[col] + "' (not in censoring.csv)");
    return c.individuals[it->second];
  };

  auto cov = read_csv(dir / "covariates.csv");
  const std::size_t vid = cov.column("id");
  c.covariate_dim = cov.header.size() - 1;
  std::vector<char> seen(c.size(), 0);
  for (auto& r : c.individuals) r.covariates = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(c.covariate_dim));
  for (const auto& row : cov.rows) {
    auto& r = find(cov, row, vid);
    std::size_t i = index[r.id];
    if (seen[i]) throw ValidationError(cov.where(row.line) + "duplicate id '" + r.id + "'");
    seen[i] = 1;
    Eigen::Index k = 0;
    for (std::size_t col = 0; col < row.cells.size(); ++col) {
      if (col == vid) continue;
      double v = parse_number(row.cells[col], cov.where(row.line));
      if (!std::isfinite(v)) throw ValidationError(cov.where(row.line) + "covariates must be finite");
      r.covariates[k++] = v;
    }
  }
  if (c.covariate_dim > 0)
    for (std::size_t i = 0; i < c.size(); ++i)
      if (!seen[i]) throw ValidationError("covariates.csv: no row for id '" + c.individuals[i].id + "'");

  auto lon = read_csv(dir / "longitudinal.csv");
  const std::size_t lid = lon.column("id"), lt = lon.column("time");
  c.biomarker_dim = lon.header.size() - 2;
  std::vector<std::vector<std::vector<double>>> rows(c.size());
  for (const auto& row : lon.rows) {
    auto& r = find(lon, row, lid);
    const auto where = lon.where(row.line);
    double t = parse_number(row.cells[lt], where);
    if (!std::isfinite(t)) throw ValidationError(where + "measurement time must be finite");
    if (!r.measurement_times.empty() && t < r.measurement_times.back())
      throw ValidationError(where + "measurement times of '" + r.id + "' are not sorted");
    std::vector<double> y;
    std::size_t missing = 0;
    for (std::size_t col = 0; col < row.cells.size(); ++col) {
      if (col == lid || col == lt) continue;
      y.push_back(parse_number(row.cells[col], where));
      if (std::isnan(y.back())) ++missing;
      else if (!std::isfinite(y.back())) throw ValidationError(where + "measurements must be finite");
    }
    if (missing != 0 && missing != y.size())
      throw ValidationError(where + "partially missing row (leave every y cell empty or none)");
    r.measurement_times.push_back(t);
    rows[index[r.id]].push_back(std::move(y));
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    auto& r = c.individuals[i];
    r.measurements.resize(static_cast<Eigen::Index>(rows[i].size()), static_cast<Eigen::Index>(c.biomarker_dim));
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      for (std::size_t k = 0; k < c.biomarker_dim; ++k)
        r.measurements(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k)) = rows[i][j][k];
  }

  auto tra = read_csv(dir / "trajectories.csv");
  const std::size_t tid = tra.column("id"), tt = tra.column("time"), ts = tra.column("state");
  for (const auto& row : tra.rows) {
    auto& r = find(tra, row, tid);
    const auto where = tra.where(row.line);
    Transition pr{parse_number(row.cells[tt], where), parse_state(row.cells[ts], graph, where)};
    if (!std::isfinite(pr.time)) throw ValidationError(where + "transition time must be finite");
    if (!r.trajectory.empty()) {
      const auto& prev = r.trajectory.back();
      if (!(pr.time > prev.time)) throw ValidationError(where + "transition times must strictly increase");
      if (!graph.has_edge(prev.state, pr.state))
        throw ValidationError(where + "transition " + to_string(Edge{prev.state, pr.state}) +
                              " is not a graph edge");
    }
    if (r.trajectory.size() >= 1 && pr.time > r.censoring_time)
      throw ValidationError(where + "transition after the censoring time of '" + r.id + "'");
    r.trajectory.push_back(pr);
  }
  for (const auto& r : c.individuals)
    if (r.trajectory.empty()) throw ValidationError("trajectories.csv: no initial state for id '" + r.id + "'");

  auto problems = validate_cohort(c, graph);
  if (!problems.empty()) throw ValidationError(problems.front());
  return c;
}

/// Latent truth of a simulation: id, b_1..b_q, psi_1..psi_m.
inline void write_latent(const fs::path& file, const Cohort& c, const Eigen::MatrixXd& b, const Eigen::MatrixXd& psi,
                         std::size_t q, std::size_t m) {
  CsvWriter w(file);
  std::vector<std::string> h{"id"};
  for (std::size_t k = 0; k < q; ++k) h.push_back("b" + std::to_string(k + 1));
  for (std::size_t k = 0; k < m; ++k) h.push_back("psi" + std::to_string(k + 1));
  w.row(h);
  for (std::size_t i = 0; i < c.size(); ++i) {
    std::vector<std::string> row{c.individuals[i].id};
    for (std::size_t k = 0; k < q; ++k) row.push_back(fmt(b(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
    for (std::size_t k = 0; k < m; ++k)
      row.push_back(fmt(psi(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k))));
    w.row(row);
  }
}

}  // namespace jmstate::io
