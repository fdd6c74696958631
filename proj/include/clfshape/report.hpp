#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "clfshape/core.hpp"
#include "clfshape/grid.hpp"
#include "clfshape/quadratics.hpp"

namespace clfshape {

// ---------------------------------------------------------------------------
// Rows. Optional numbers are written as empty cells.

struct SweepRow {
  std::string env;
  double H = 0.0;
  std::string cost_kind;
  double gamma = 0.0;
  std::optional<int> sweeps;
  std::optional<double> bellman_residual;
  std::optional<double> C_constant;
  std::optional<double> delta_rank2;
  std::optional<double> margin;
  std::optional<bool> predicted_stable;
  std::optional<double> rollout_success_fraction;
  std::string status = "ok";
  double wall_time_s = 0.0;  // goes to timing.csv only
};

struct CertificateRow {
  std::string env;
  double H = 0.0;
  std::string cost_kind;
  double gamma = 0.0;
  int rank = 1;
  std::optional<double> C_constant;
  std::optional<double> delta;
  std::optional<double> margin;
  std::optional<bool> predicted_stable;
  std::optional<int> n_success;
  std::optional<int> n_trials;
  std::optional<double> success_fraction;
  std::optional<bool> composite_positivity;
  std::optional<double> composite_worst_positivity;
  std::optional<bool> composite_decrease;
  std::optional<double> composite_worst_decrease;
  std::string status = "ok";
};

struct DominationRow {
  std::string env;
  double H = 0.0;
  double gamma = 0.0;
  bool holds_on_grid = false;
  double worst_violation = 0.0;
};

struct ClfRow {
  std::string env;
  double H = 0.0;
  bool is_clf_on_grid = false;
  double fraction_violating = 0.0;
  double worst_decrease = 0.0;
  bool lemma1_holds = false;
  double lemma1_worst_margin = 0.0;
};

struct SummaryRow {
  std::string env;
  double H = 0.0;
  std::string cost_kind;
  std::optional<double> min_stabilizing_gamma;  // smallest gamma with success fraction 1
  std::optional<double> min_predicted_gamma;    // smallest gamma with margin > 0
  std::optional<double> gamma_bar;              // smallest gamma with domination on the grid
};

struct MpcRow {
  std::string env;
  double H = 0.0;
  std::string terminal;
  int horizon = 0;
  bool degenerate = false;
  std::optional<int> n_success;
  std::optional<int> n_trials;
  std::optional<double> success_fraction;
  std::string status = "ok";
};

struct MpcSummaryRow {
  std::string env;
  double H = 0.0;
  std::string terminal;
  std::optional<int> min_stabilizing_horizon;
};

struct SweepReport {
  std::vector<SweepRow> rows;
  std::vector<CertificateRow> certificates;
  std::vector<DominationRow> domination;
  std::vector<ClfRow> clf;
  std::vector<SummaryRow> summary;
  int failures = 0;
};

struct MpcReport {
  std::vector<MpcRow> rows;
  std::vector<MpcSummaryRow> summary;
  int failures = 0;
};

// ---------------------------------------------------------------------------
// Cell formatting

namespace csv {

inline std::string cell(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return format_double(v);
}
inline std::string cell(int v) { return std::to_string(v); }
inline std::string cell(bool v) { return v ? "true" : "false"; }
inline std::string cell(const std::string& v) {
  if (v.find_first_of(",\"\n") == std::string::npos) return v;
  std::string out = "\"";
  for (char ch : v) {
    if (ch == '"') out += '"';
    out += ch == '\n' ? ' ' : ch;
  }
  return out + "\"";
}
template <typename T>
std::string cell(const std::optional<T>& v) {
  return v ? cell(*v) : std::string();
}

inline std::string join(std::initializer_list<std::string> cells) {
  std::string out;
  bool first = true;
  for (const auto& c : cells) {
    if (!first) out += ',';
    out += c;
    first = false;
  }
  return out;
}

/// Splits one line written by this module (quoted cells allowed).
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> cells(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cells.back() += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cells.back() += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      cells.emplace_back();
    } else {
      cells.back() += ch;
    }
  }
  return cells;
}

}  // namespace csv

inline const char* kSweepHeader =
    "env,H,cost_kind,gamma,sweeps,bellman_residual,C_constant,delta_rank2,margin,"
    "predicted_stable,rollout_success_fraction,status";
inline const char* kCertificateHeader =
    "env,H,cost_kind,gamma,rank,C_constant,delta,margin,predicted_stable,n_success,n_trials,"
    "success_fraction,composite_positivity,composite_worst_positivity,composite_decrease,"
    "composite_worst_decrease,status";
inline const char* kDominationHeader = "env,H,gamma,holds_on_grid,worst_violation";
inline const char* kClfHeader =
    "env,H,is_clf_on_grid,fraction_violating,worst_decrease,lemma1_holds,lemma1_worst_margin";
inline const char* kSummaryHeader =
    "env,H,cost_kind,min_stabilizing_gamma,min_predicted_gamma,gamma_bar";
inline const char* kTimingHeader = "env,H,cost_kind,gamma,wall_time_s";
inline const char* kMpcHeader =
    "env,H,terminal,horizon,degenerate,n_success,n_trials,success_fraction,status";
inline const char* kMpcSummaryHeader = "env,H,terminal,min_stabilizing_horizon";

inline std::string format_row(const SweepRow& r) {
  using csv::cell;
  return csv::join({cell(r.env), cell(r.H), cell(r.cost_kind), cell(r.gamma), cell(r.sweeps),
                    cell(r.bellman_residual), cell(r.C_constant), cell(r.delta_rank2),
                    cell(r.margin), cell(r.predicted_stable), cell(r.rollout_success_fraction),
                    cell(r.status)});
}

inline std::string format_row(const CertificateRow& r) {
  using csv::cell;
  return csv::join({cell(r.env), cell(r.H), cell(r.cost_kind), cell(r.gamma), cell(r.rank),
                    cell(r.C_constant), cell(r.delta), cell(r.margin), cell(r.predicted_stable),
                    cell(r.n_success), cell(r.n_trials), cell(r.success_fraction),
                    cell(r.composite_positivity), cell(r.composite_worst_positivity),
                    cell(r.composite_decrease), cell(r.composite_worst_decrease),
                    cell(r.status)});
}

inline std::string format_row(const DominationRow& r) {
  using csv::cell;
  return csv::join(
      {cell(r.env), cell(r.H), cell(r.gamma), cell(r.holds_on_grid), cell(r.worst_violation)});
}

inline std::string format_row(const ClfRow& r) {
  using csv::cell;
  return csv::join({cell(r.env), cell(r.H), cell(r.is_clf_on_grid), cell(r.fraction_violating),
                    cell(r.worst_decrease), cell(r.lemma1_holds), cell(r.lemma1_worst_margin)});
}

inline std::string format_row(const SummaryRow& r) {
  using csv::cell;
  return csv::join({cell(r.env), cell(r.H), cell(r.cost_kind), cell(r.min_stabilizing_gamma),
                    cell(r.min_predicted_gamma), cell(r.gamma_bar)});
}

inline std::string format_row(const MpcRow& r) {
  using csv::cell;
  return csv::join({cell(r.env), cell(r.H), cell(r.terminal), cell(r.horizon),
                    cell(r.degenerate), cell(r.n_success), cell(r.n_trials),
                    cell(r.success_fraction), cell(r.status)});
}

inline std::string format_row(const MpcSummaryRow& r) {
  using csv::cell;
  return csv::join(
      {cell(r.env), cell(r.H), cell(r.terminal), cell(r.min_stabilizing_horizon)});
}

// ---------------------------------------------------------------------------
// Summaries

/// Smallest stabilizing / predicted gamma per (env, H, cost kind), in order
/// of first appearance, plus the smallest gamma at which domination holds.
inline std::vector<SummaryRow> summarize(const std::vector<SweepRow>& rows,
                                         const std::vector<DominationRow>& domination) {
  std::vector<SummaryRow> out;
  auto find = [&out](const SweepRow& r) -> SummaryRow& {
    for (auto& s : out)
      if (s.env == r.env && s.H == r.H && s.cost_kind == r.cost_kind) return s;
    out.push_back({r.env, r.H, r.cost_kind, std::nullopt, std::nullopt, std::nullopt});
    return out.back();
  };
  auto lower = [](std::optional<double>& slot, double g) {
    if (!slot || g < *slot) slot = g;
  };
  for (const auto& r : rows) {
    SummaryRow& s = find(r);
    if (r.rollout_success_fraction && *r.rollout_success_fraction == 1.0)
      lower(s.min_stabilizing_gamma, r.gamma);
    if (r.predicted_stable && *r.predicted_stable) lower(s.min_predicted_gamma, r.gamma);
  }
  for (auto& s : out)
    for (const auto& d : domination)
      if (d.env == s.env && d.H == s.H && d.holds_on_grid) lower(s.gamma_bar, d.gamma);
  return out;
}

inline std::vector<MpcSummaryRow> summarize(const std::vector<MpcRow>& rows) {
  std::vector<MpcSummaryRow> out;
  for (const auto& r : rows) {
    MpcSummaryRow* s = nullptr;
    for (auto& e : out)
      if (e.env == r.env && e.H == r.H && e.terminal == r.terminal) s = &e;
    if (!s) {
      out.push_back({r.env, r.H, r.terminal, std::nullopt});
      s = &out.back();
    }
    if (r.degenerate || !r.success_fraction || *r.success_fraction != 1.0) continue;
    if (!s->min_stabilizing_horizon || r.horizon < *s->min_stabilizing_horizon)
      s->min_stabilizing_horizon = r.horizon;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output directory handling

/// Creates `dir` and refuses to clobber any of `files` unless `force`.
inline void prepare_output_dir(const std::string& dir, const std::vector<std::string>& files,
                               bool force) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  if (force) return;
  for (const auto& f : files)
    if (fs::exists(fs::path(dir) / f))
      throw Error("refusing to overwrite " + (fs::path(dir) / f).string() +
                  " (pass --force to replace it)");
}

/// An open CSV file that flushes every row.
class CsvFile {
 public:
  CsvFile() = default;
  CsvFile(const std::string& path, const char* header) : out_(path) {
    if (!out_) throw Error("cannot write " + path);
    line(header);
  }
  void line(const std::string& text) {
    out_ << text << '\n';
    out_.flush();
  }

 private:
  std::ofstream out_;
};

/// Streams sweep results into out_dir as they are produced.
class SweepWriter {
 public:
  static const std::vector<std::string>& files() {
    static const std::vector<std::string> names{"sweep.csv",  "certificates.csv", "domination.csv",
                                                "clf.csv",    "summary.csv",      "timing.csv"};
    return names;
  }

  SweepWriter(const std::string& out_dir, bool force) : dir_(out_dir) {
    prepare_output_dir(out_dir, files(), force);
    sweep_ = CsvFile(path("sweep.csv"), kSweepHeader);
    certificates_ = CsvFile(path("certificates.csv"), kCertificateHeader);
    domination_ = CsvFile(path("domination.csv"), kDominationHeader);
    clf_ = CsvFile(path("clf.csv"), kClfHeader);
    timing_ = CsvFile(path("timing.csv"), kTimingHeader);
  }

  const std::string& dir() const { return dir_; }
  std::string path(const std::string& name) const {
    return (std::filesystem::path(dir_) / name).string();
  }

  void add(const SweepRow& r) {
    sweep_.line(format_row(r));
    using csv::cell;
    timing_.line(csv::join(
        {cell(r.env), cell(r.H), cell(r.cost_kind), cell(r.gamma), cell(r.wall_time_s)}));
  }
  void add(const CertificateRow& r) { certificates_.line(format_row(r)); }
  void add(const DominationRow& r) { domination_.line(format_row(r)); }
  void add(const ClfRow& r) { clf_.line(format_row(r)); }

  void finish(const std::vector<SummaryRow>& summary) {
    CsvFile out(path("summary.csv"), kSummaryHeader);
    for (const auto& s : summary) out.line(format_row(s));
  }

 private:
  std::string dir_;
  CsvFile sweep_, certificates_, domination_, clf_, timing_;
};

/// Writes a complete report at once (same bytes as streaming).
inline void emit_report(const SweepReport& report, const std::string& out_dir, bool force) {
  SweepWriter w(out_dir, force);
  for (const auto& r : report.clf) w.add(r);
  for (const auto& r : report.rows) w.add(r);
  for (const auto& r : report.certificates) w.add(r);
  for (const auto& r : report.domination) w.add(r);
  w.finish(report.summary);
}

class MpcWriter {
 public:
  static const std::vector<std::string>& files() {
    static const std::vector<std::string> names{"mpc.csv", "mpc_summary.csv"};
    return names;
  }
  MpcWriter(const std::string& out_dir, bool force) : dir_(out_dir) {
    prepare_output_dir(out_dir, files(), force);
    rows_ = CsvFile((std::filesystem::path(dir_) / "mpc.csv").string(), kMpcHeader);
  }
  void add(const MpcRow& r) { rows_.line(format_row(r)); }
  void finish(const std::vector<MpcSummaryRow>& summary) {
    CsvFile out((std::filesystem::path(dir_) / "mpc_summary.csv").string(), kMpcSummaryHeader);
    for (const auto& s : summary) out.line(format_row(s));
  }

 private:
  std::string dir_;
  CsvFile rows_;
};

// ---------------------------------------------------------------------------
// Reading sweep.csv back (for the report subcommand)

inline std::optional<double> parse_optional_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  if (s == "nan") return std::numeric_limits<double>::quiet_NaN();
  return std::stod(s);
}

template <typename Row, typename Fill>
std::vector<Row> read_csv_rows(const std::string& path, const char* header, Fill&& fill) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line) || line != header) throw Error(path + ": unexpected header");
  const std::size_t columns = csv::split(header).size();
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto c = csv::split(line);
    if (c.size() != columns) throw Error(path + ": malformed row '" + line + "'");
    rows.push_back(fill(c));
  }
  return rows;
}

inline std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  return read_csv_rows<SweepRow>(path, kSweepHeader, [](const std::vector<std::string>& c) {
    SweepRow r;
    r.env = c[0];
    r.H = std::stod(c[1]);
    r.cost_kind = c[2];
    r.gamma = std::stod(c[3]);
    if (!c[4].empty()) r.sweeps = std::stoi(c[4]);
    r.bellman_residual = parse_optional_double(c[5]);
    r.C_constant = parse_optional_double(c[6]);
    r.delta_rank2 = parse_optional_double(c[7]);
    r.margin = parse_optional_double(c[8]);
    if (!c[9].empty()) r.predicted_stable = c[9] == "true";
    r.rollout_success_fraction = parse_optional_double(c[10]);
    r.status = c[11];
    return r;
  });
}

inline std::vector<DominationRow> read_domination_csv(const std::string& path) {
  return read_csv_rows<DominationRow>(path, kDominationHeader,
                                      [](const std::vector<std::string>& c) {
                                        DominationRow r;
                                        r.env = c[0];
                                        r.H = std::stod(c[1]);
                                        r.gamma = std::stod(c[2]);
                                        r.holds_on_grid = c[3] == "true";
                                        r.worst_violation = std::stod(c[4]);
                                        return r;
                                      });
}

// ---------------------------------------------------------------------------
// Field dumps: one CSV row per node plus a JSON metadata sidecar.

inline void write_field(const std::string& stem, const GridSpec& grid, const ValueField& field,
                        const TabularPolicy* policy, const nlohmann::json& extra = {}) {
  std::ofstream out(stem + ".csv");
  if (!out) throw Error("cannot write " + stem + ".csv");
  out << "node";
  for (int d = 0; d < grid.dim(); ++d) out << ",i" << d;
  for (int d = 0; d < grid.dim(); ++d) out << ",x" << d;
  out << ",value";
  const int m = policy && !policy->input.empty() ? static_cast<int>(policy->input[0].size()) : 0;
  if (policy) {
    out << ",input_index";
    for (int k = 0; k < m; ++k) out << ",u" << k;
  }
  out << '\n';
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out << i;
    for (int d = 0; d < grid.dim(); ++d) out << ',' << grid.coordinate_index(i, d);
    const Vector x = grid.node(i);
    for (int d = 0; d < grid.dim(); ++d) out << ',' << csv::cell(x[d]);
    out << ',' << csv::cell(field[i]);
    if (policy) {
      out << ',' << policy->index[i];
      for (int k = 0; k < m; ++k) out << ',' << csv::cell(policy->input[i][k]);
    }
    out << '\n';
  }
  nlohmann::json meta = extra.is_object() ? extra : nlohmann::json::object();
  meta["cost_kind"] = to_string(field.cost_kind);
  meta["gamma"] = field.gamma;
  meta["bellman_residual"] = field.bellman_residual;
  meta["sweeps"] = field.sweeps;
  nlohmann::json g;
  for (int d = 0; d < grid.dim(); ++d) {
    g["coords"].push_back(grid.coords(d));
    g["wrap"].push_back(static_cast<bool>(grid.wrap_flags()[d]));
  }
  meta["grid"] = g;
  std::ofstream side(stem + ".json");
  if (!side) throw Error("cannot write " + stem + ".json");
  side << meta.dump(2) << '\n';
}

}  // namespace clfshape
