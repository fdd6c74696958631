#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "clfshape/core.hpp"
#include "clfshape/dynamics.hpp"
#include "clfshape/quadratics.hpp"

namespace clfshape {

struct EnvConfig {
  std::string name = "pendulum";
  double dt = 0.1;
  std::vector<double> input_bounds{20.0};  // one sweep axis entry per bound H
  std::map<std::string, double> params;   // physical parameters, env specific
  bool operator==(const EnvConfig&) const = default;
};

struct GridConfig {
  std::vector<int> counts;      // nodes per state dimension
  std::vector<double> stretch;  // 0 = uniform
  bool operator==(const GridConfig&) const = default;
};

struct CostConfig {
  std::vector<double> q_diag;
  std::vector<double> r_diag;
  bool operator==(const CostConfig&) const = default;
};

struct ClfConfig {
  std::string source = "dare";  // dare | file | zero
  double gamma_design = 1.0;
  std::string file;
  bool operator==(const ClfConfig&) const = default;
};

struct RolloutConfig {
  int n_trials = 20;
  double horizon_seconds = 20.0;
  double success_radius = 0.05;
  std::vector<double> ic_lo;
  std::vector<double> ic_hi;
  bool operator==(const RolloutConfig&) const = default;
};

struct SolverConfig {
  double tol = 1e-6;
  int max_sweeps = 200000;
  double eval_tol = 1e-6;
  double escape_penalty = 1e3;
  double exclusion_radius = 0.05;
  bool refine_inputs = true;
  bool operator==(const SolverConfig&) const = default;
};

struct MpcConfig {
  std::vector<int> horizons{0, 1, 2, 3, 5, 8, 12, 20, 30};
  std::vector<std::string> terminals{"clf", "zero"};
  bool operator==(const MpcConfig&) const = default;
};

/// Everything one experiment run needs. Missing JSON keys take the defaults
/// of the named environment; unknown keys are rejected.
struct ExperimentConfig {
  EnvConfig env;
  GridConfig grid;
  int input_count = 41;
  CostConfig cost;
  ClfConfig clf;
  std::vector<double> gamma_list;
  std::vector<std::string> cost_kinds{"standard", "shaped"};
  RolloutConfig rollout;
  SolverConfig solver;
  std::vector<int> suboptimal_ranks{1, 2, 3};
  MpcConfig mpc;
  std::uint64_t seed = 0;
  int threads = 1;
  bool dump_fields = false;
  std::string out_dir = "out";
  bool operator==(const ExperimentConfig&) const = default;
};

/// 0.00, 0.05, ..., 0.95 followed by 0.99. Each entry is k/100 so that the
/// printed values are the shortest decimals.
inline std::vector<double> default_gamma_list() {
  std::vector<double> g;
  for (int k = 0; k <= 95; k += 5) g.push_back(k / 100.0);
  g.push_back(0.99);
  return g;
}

inline int env_state_dim(const std::string& name) {
  if (name == "pendulum" || name == "double_integrator") return 2;
  if (name == "cartpole") return 4;
  throw ConfigError("unknown environment '" + name + "'");
}

inline const std::set<std::string>& env_param_keys(const std::string& name) {
  static const std::map<std::string, std::set<std::string>> keys{
      {"pendulum", {"mass", "length", "gravity", "damping", "max_speed"}},
      {"double_integrator", {"position_bound", "velocity_bound"}},
      {"cartpole",
       {"cart_mass", "pole_mass", "pole_length", "gravity", "track_half_length",
        "max_cart_speed", "max_pole_speed"}},
  };
  auto it = keys.find(name);
  if (it == keys.end()) throw ConfigError("unknown environment '" + name + "'");
  return it->second;
}

/// Defaults for an environment name.
inline ExperimentConfig default_config(const std::string& env_name) {
  ExperimentConfig c;
  c.env.name = env_name;
  c.gamma_list = default_gamma_list();
  constexpr double kPi = std::numbers::pi;
  if (env_name == "pendulum") {
    c.env.input_bounds = {20.0, 7.0, 4.0};
    c.grid.counts = {101, 101};
    c.cost = {{1.0, 1.0}, {0.1}};
    c.rollout.ic_lo = {-kPi, -0.1};
    c.rollout.ic_hi = {kPi, 0.1};
  } else if (env_name == "double_integrator") {
    c.env.input_bounds = {20.0};
    c.grid.counts = {81, 81};
    c.cost = {{1.0, 1.0}, {0.1}};
    c.rollout.ic_lo = {-1.0, -1.0};
    c.rollout.ic_hi = {1.0, 1.0};
  } else if (env_name == "cartpole") {
    c.env.input_bounds = {10.0};
    c.grid.counts = {11, 11, 11, 11};
    c.cost = {{1.0, 1.0, 0.1, 0.1}, {0.1}};
    c.rollout.ic_lo = {-0.1, -0.2, -0.05, -0.05};
    c.rollout.ic_hi = {0.1, 0.2, 0.05, 0.05};
  } else {
    throw ConfigError("unknown environment '" + env_name + "'");
  }
  c.grid.stretch.assign(c.grid.counts.size(), 0.0);
  return c;
}

/// Throws ConfigError describing the first problem found.
inline void validate(const ExperimentConfig& c) {
  const int n = env_state_dim(c.env.name);
  const auto& keys = env_param_keys(c.env.name);
  for (const auto& [k, v] : c.env.params)
    if (!keys.count(k)) throw ConfigError("unknown parameter '" + k + "' for " + c.env.name);
  if (!(c.env.dt > 0.0)) throw ConfigError("env.dt must be positive");
  if (c.env.input_bounds.empty()) throw ConfigError("env.input_bounds must not be empty");
  for (double h : c.env.input_bounds)
    if (!(h > 0.0)) throw ConfigError("input bounds must be positive");
  if (static_cast<int>(c.grid.counts.size()) != n)
    throw ConfigError("grid.counts needs one entry per state dimension");
  for (int k : c.grid.counts)
    if (k < 3 || k % 2 == 0) throw ConfigError("grid counts must be odd and >= 3");
  if (c.grid.stretch.size() != c.grid.counts.size())
    throw ConfigError("grid.stretch needs one entry per state dimension");
  for (double s : c.grid.stretch)
    if (!(s >= 0.0)) throw ConfigError("grid.stretch must be non-negative");
  if (c.input_count < 1 || c.input_count % 2 == 0)
    throw ConfigError("input_count must be odd and positive");
  if (static_cast<int>(c.cost.q_diag.size()) != n || c.cost.r_diag.size() != 1)
    throw ConfigError("cost.q_diag / cost.r_diag have the wrong length");
  for (double q : c.cost.q_diag)
    if (!(q > 0.0)) throw ConfigError("cost.q_diag entries must be positive");
  for (double r : c.cost.r_diag)
    if (!(r > 0.0)) throw ConfigError("cost.r_diag entries must be positive");
  if (c.clf.source != "dare" && c.clf.source != "file" && c.clf.source != "zero")
    throw ConfigError("clf.source must be dare, file or zero");
  if (c.clf.source == "file" && c.clf.file.empty()) throw ConfigError("clf.file is required");
  if (!(c.clf.gamma_design >= 0.0 && c.clf.gamma_design <= 1.0))
    throw ConfigError("clf.gamma_design must lie in [0, 1]");
  if (c.gamma_list.empty()) throw ConfigError("gamma_list must not be empty");
  for (double g : c.gamma_list)
    if (!(g >= 0.0 && g <= 0.999)) throw ConfigError("gamma_list entries must lie in [0, 0.999]");
  if (c.cost_kinds.empty()) throw ConfigError("cost_kinds must not be empty");
  for (const auto& k : c.cost_kinds) parse_cost_kind(k);
  const auto& r = c.rollout;
  if (r.n_trials < 1) throw ConfigError("rollout.n_trials must be >= 1");
  if (!(r.horizon_seconds > 0.0) || !(r.success_radius > 0.0))
    throw ConfigError("rollout horizon and radius must be positive");
  if (static_cast<int>(r.ic_lo.size()) != n || static_cast<int>(r.ic_hi.size()) != n)
    throw ConfigError("rollout.ic_lo / ic_hi need one entry per state dimension");
  for (int d = 0; d < n; ++d)
    if (!(r.ic_lo[d] <= r.ic_hi[d])) throw ConfigError("rollout.ic_lo must not exceed ic_hi");
  const auto& s = c.solver;
  if (!(s.tol > 0.0) || !(s.eval_tol > 0.0)) throw ConfigError("solver tolerances must be positive");
  if (s.max_sweeps < 1) throw ConfigError("solver.max_sweeps must be >= 1");
  if (!(s.escape_penalty >= 0.0)) throw ConfigError("solver.escape_penalty must be >= 0");
  if (!(s.exclusion_radius >= 0.0)) throw ConfigError("solver.exclusion_radius must be >= 0");
  for (int k : c.suboptimal_ranks)
    if (k < 1 || k > c.input_count) throw ConfigError("suboptimal ranks must lie in [1, input_count]");
  for (int h : c.mpc.horizons)
    if (h < 0) throw ConfigError("mpc.horizons must be >= 0");
  for (const auto& t : c.mpc.terminals)
    if (t != "clf" && t != "zero") throw ConfigError("mpc.terminals entries must be clf or zero");
  if (c.threads < 1) throw ConfigError("threads must be >= 1");
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using json = nlohmann::json;

inline void reject_unknown(const json& j, const std::set<std::string>& allowed,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw ConfigError("unknown key '" + where + it.key() + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("bad value for '" + where + key + "': " + e.what());
  }
}

}  // namespace detail

inline nlohmann::json to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  j["env"] = {{"name", c.env.name},
              {"dt", c.env.dt},
              {"input_bounds", c.env.input_bounds},
              {"params", c.env.params}};
  j["grid"] = {{"counts", c.grid.counts}, {"stretch", c.grid.stretch}};
  j["input_count"] = c.input_count;
  j["cost"] = {{"q_diag", c.cost.q_diag}, {"r_diag", c.cost.r_diag}};
  j["clf"] = {{"source", c.clf.source}, {"gamma_design", c.clf.gamma_design},
              {"file", c.clf.file}};
  j["gamma_list"] = c.gamma_list;
  j["cost_kinds"] = c.cost_kinds;
  j["rollout"] = {{"n_trials", c.rollout.n_trials},
                  {"horizon_seconds", c.rollout.horizon_seconds},
                  {"success_radius", c.rollout.success_radius},
                  {"ic_lo", c.rollout.ic_lo},
                  {"ic_hi", c.rollout.ic_hi}};
  j["solver"] = {{"tol", c.solver.tol},
                 {"max_sweeps", c.solver.max_sweeps},
                 {"eval_tol", c.solver.eval_tol},
                 {"escape_penalty", c.solver.escape_penalty},
                 {"exclusion_radius", c.solver.exclusion_radius},
                 {"refine_inputs", c.solver.refine_inputs}};
  j["suboptimal_ranks"] = c.suboptimal_ranks;
  j["mpc"] = {{"horizons", c.mpc.horizons}, {"terminals", c.mpc.terminals}};
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["dump_fields"] = c.dump_fields;
  j["out_dir"] = c.out_dir;
  return j;
}

/// Parses and validates. Throws ConfigError.
inline ExperimentConfig config_from_json(const nlohmann::json& j) {
  using detail::read;
  detail::reject_unknown(j,
                         {"env", "grid", "input_count", "cost", "clf", "gamma_list", "cost_kinds",
                          "rollout", "solver", "suboptimal_ranks", "mpc", "seed", "threads",
                          "dump_fields", "out_dir"},
                         "");
  std::string name = "pendulum";
  if (j.contains("env")) {
    detail::reject_unknown(j["env"], {"name", "dt", "input_bounds", "params"}, "env.");
    read(j["env"], "name", name, "env.");
  }
  ExperimentConfig c = default_config(name);
  if (j.contains("env")) {
    const auto& e = j["env"];
    read(e, "dt", c.env.dt, "env.");
    read(e, "input_bounds", c.env.input_bounds, "env.");
    read(e, "params", c.env.params, "env.");
  }
  if (j.contains("grid")) {
    detail::reject_unknown(j["grid"], {"counts", "stretch"}, "grid.");
    read(j["grid"], "counts", c.grid.counts, "grid.");
    if (!j["grid"].contains("stretch")) c.grid.stretch.assign(c.grid.counts.size(), 0.0);
    read(j["grid"], "stretch", c.grid.stretch, "grid.");
  }
  read(j, "input_count", c.input_count, "");
  if (j.contains("cost")) {
    detail::reject_unknown(j["cost"], {"q_diag", "r_diag"}, "cost.");
    read(j["cost"], "q_diag", c.cost.q_diag, "cost.");
    read(j["cost"], "r_diag", c.cost.r_diag, "cost.");
  }
  if (j.contains("clf")) {
    detail::reject_unknown(j["clf"], {"source", "gamma_design", "file"}, "clf.");
    read(j["clf"], "source", c.clf.source, "clf.");
    read(j["clf"], "gamma_design", c.clf.gamma_design, "clf.");
    read(j["clf"], "file", c.clf.file, "clf.");
  }
  read(j, "gamma_list", c.gamma_list, "");
  read(j, "cost_kinds", c.cost_kinds, "");
  if (j.contains("rollout")) {
    const auto& r = j["rollout"];
    detail::reject_unknown(r, {"n_trials", "horizon_seconds", "success_radius", "ic_lo", "ic_hi"},
                           "rollout.");
    read(r, "n_trials", c.rollout.n_trials, "rollout.");
    read(r, "horizon_seconds", c.rollout.horizon_seconds, "rollout.");
    read(r, "success_radius", c.rollout.success_radius, "rollout.");
    read(r, "ic_lo", c.rollout.ic_lo, "rollout.");
    read(r, "ic_hi", c.rollout.ic_hi, "rollout.");
  }
  if (j.contains("solver")) {
    const auto& s = j["solver"];
    detail::reject_unknown(s,
                           {"tol", "max_sweeps", "eval_tol", "escape_penalty", "exclusion_radius",
                            "refine_inputs"},
                           "solver.");
    read(s, "tol", c.solver.tol, "solver.");
    read(s, "max_sweeps", c.solver.max_sweeps, "solver.");
    read(s, "eval_tol", c.solver.eval_tol, "solver.");
    read(s, "escape_penalty", c.solver.escape_penalty, "solver.");
    read(s, "exclusion_radius", c.solver.exclusion_radius, "solver.");
    read(s, "refine_inputs", c.solver.refine_inputs, "solver.");
  }
  read(j, "suboptimal_ranks", c.suboptimal_ranks, "");
  if (j.contains("mpc")) {
    detail::reject_unknown(j["mpc"], {"horizons", "terminals"}, "mpc.");
    read(j["mpc"], "horizons", c.mpc.horizons, "mpc.");
    read(j["mpc"], "terminals", c.mpc.terminals, "mpc.");
  }
  read(j, "seed", c.seed, "");
  read(j, "threads", c.threads, "");
  read(j, "dump_fields", c.dump_fields, "");
  read(j, "out_dir", c.out_dir, "");
  validate(c);
  return c;
}

inline std::string serialize_config(const ExperimentConfig& c) { return to_json(c).dump(2); }

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

// ---------------------------------------------------------------------------
// Builders

inline double param_or(const EnvConfig& e, const std::string& key, double fallback) {
  auto it = e.params.find(key);
  return it == e.params.end() ? fallback : it->second;
}

inline Environment make_environment(const EnvConfig& e, double input_bound) {
  if (e.name == "pendulum") {
    PendulumParams p;
    p.mass = param_or(e, "mass", p.mass);
    p.length = param_or(e, "length", p.length);
    p.gravity = param_or(e, "gravity", p.gravity);
    p.damping = param_or(e, "damping", p.damping);
    p.max_speed = param_or(e, "max_speed", p.max_speed);
    return make_pendulum(e.dt, input_bound, p);
  }
  if (e.name == "double_integrator")
    return make_double_integrator(e.dt, input_bound, param_or(e, "position_bound", 2.0),
                                  param_or(e, "velocity_bound", 2.0));
  if (e.name == "cartpole") {
    CartpoleParams p;
    p.cart_mass = param_or(e, "cart_mass", p.cart_mass);
    p.pole_mass = param_or(e, "pole_mass", p.pole_mass);
    p.pole_length = param_or(e, "pole_length", p.pole_length);
    p.gravity = param_or(e, "gravity", p.gravity);
    p.track_half_length = param_or(e, "track_half_length", p.track_half_length);
    p.max_cart_speed = param_or(e, "max_cart_speed", p.max_cart_speed);
    p.max_pole_speed = param_or(e, "max_pole_speed", p.max_pole_speed);
    return make_cartpole(e.dt, input_bound, p);
  }
  throw ConfigError("unknown environment '" + e.name + "'");
}

inline RunningCost make_running_cost(const CostConfig& c) {
  return {QuadraticForm::diagonal(c.q_diag), QuadraticForm::diagonal(c.r_diag)};
}

/// Candidate CLF per the config source. "zero" gives W = 0, under which the
/// shaped problem coincides with the standard one.
inline QuadraticForm make_clf(const ExperimentConfig& c, const Environment& env) {
  if (c.clf.source == "zero") return QuadraticForm::zero(env.state_dim());
  if (c.clf.source == "file") {
    QuadraticForm W = read_quadratic_csv(c.clf.file);
    if (W.dim() != env.state_dim()) throw ConfigError("CLF file has the wrong dimension");
    return W;
  }
  const RunningCost cost = make_running_cost(c.cost);
  return synthesize_clf(env, cost.Q.matrix(), cost.R.matrix(), c.clf.gamma_design).value;
}

inline Vector to_vector(const std::vector<double>& v) {
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace clfshape
