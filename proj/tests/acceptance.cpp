// End-to-end acceptance run. Prints one PASS/FAIL line per criterion.
//
// Exit status is 0 when the set of failing criteria equals --expect-fail
// exactly, so a known, documented failure stays visible without masking new
// regressions (or an unexpected fix).

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <CLI11.hpp>

#include "clfshape/clfshape.hpp"

namespace fs = std::filesystem;
using namespace clfshape;

namespace {

using Table = std::vector<std::map<std::string, std::string>>;

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  const auto header = csv::split(line);
  Table rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto cells = csv::split(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size() && i < cells.size(); ++i) row[header[i]] = cells[i];
    rows.push_back(std::move(row));
  }
  return rows;
}

double num(const std::string& s) { return std::stod(s); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

class Runner {
 public:
  Runner(std::string cli, fs::path work) : cli_(std::move(cli)), work_(std::move(work)) {}

  /// Runs the CLI; returns its exit status and the wall time.
  std::pair<int, double> cli(const std::string& args, const std::string& log_name) const {
    const std::string cmd =
        "\"" + cli_ + "\" " + args + " > \"" + (work_ / log_name).string() + "\" 2>&1";
    const auto t0 = std::chrono::steady_clock::now();
    const int raw = std::system(cmd.c_str());
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {WIFEXITED(raw) ? WEXITSTATUS(raw) : -1, secs};
  }

  const fs::path& work() const { return work_; }

 private:
  std::string cli_;
  fs::path work_;
};

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << v;
  return ss.str();
}

// ---------------------------------------------------------------------------

Outcome criterion1(const fs::path& configs) {
  ExperimentConfig c = load_config((configs / "double_integrator.json").string());
  c.threads = 1;
  const Problem p(c, c.env.input_bounds.front());
  const Linearization& lin = *p.env.exact_linearization();
  Outcome out{true, ""};
  for (double g : {0.5, 0.9, 0.99}) {
    const auto t0 = std::chrono::steady_clock::now();
    const SolveResult r =
        value_iteration(*p.model, CostKind::kStandard, g, c.solver.tol, c.solver.max_sweeps);
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const QuadraticForm P(
        solve_dare_discounted(lin.A, lin.B, p.cost.Q.matrix(), p.cost.R.matrix(), g).value);
    double err = 0.0, scale = 0.0;
    const GridSpec& grid = p.model->grid();
    for (std::size_t i = 0; i < grid.size(); ++i) {
      const Vector& x = p.model->node(i);
      bool inner = true;
      for (int d = 0; d < grid.dim(); ++d) inner = inner && std::abs(x[d]) <= 0.5 * grid.hi(d);
      if (!inner) continue;
      err = std::max(err, std::abs(r.field[i] - P(x)));
      scale = std::max(scale, P(x));
    }
    const double rel = err / scale;
    const bool ok = rel <= 0.05 && secs < 10.0;
    out.pass = out.pass && ok;
    out.detail += "g=" + fmt(g) + ": rel " + fmt(rel) + ", " + fmt(secs) + " s; ";
  }
  return out;
}

Outcome criterion2(const fs::path& dir, double secs) {
  const Table summary = read_table(dir / "summary.csv");
  const Table rows = read_table(dir / "sweep.csv");
  Outcome out{secs < 900.0, "full sweep " + fmt(secs) + " s; "};
  std::map<std::string, std::map<std::string, std::string>> min_gamma;  // H -> kind -> value
  for (const auto& s : summary) min_gamma[s.at("H")][s.at("cost_kind")] = s.at("min_stabilizing_gamma");
  for (const auto& [H, kinds] : min_gamma) {
    const std::string std_min = kinds.at("standard"), shaped_min = kinds.at("shaped");
    bool ordered = !shaped_min.empty() && (std_min.empty() || num(shaped_min) <= num(std_min));
    out.pass = out.pass && ordered;
    out.detail += "H=" + H + " shaped " + (shaped_min.empty() ? "none" : fmt(num(shaped_min))) +
                  " <= standard " + (std_min.empty() ? "none" : fmt(num(std_min))) + "; ";
  }
  for (const auto& r : rows) {
    if (num(r.at("gamma")) != 0.0) continue;
    const bool success = !r.at("rollout_success_fraction").empty() &&
                         num(r.at("rollout_success_fraction")) == 1.0;
    if (r.at("cost_kind") == "standard" && success) {
      out.pass = false;
      out.detail += "standard stabilizes at gamma 0 for H=" + r.at("H") + "; ";
    }
    if (r.at("cost_kind") == "shaped" && num(r.at("H")) == 20.0) {
      out.pass = out.pass && success;
      out.detail += std::string("shaped H=20 gamma=0 ") + (success ? "20/20" : "fails") + "; ";
    }
  }
  return out;
}

Outcome criterion3(const fs::path& di) {
  Outcome out{true, ""};
  for (const auto& r : read_table(di / "clf.csv")) {
    const double m = num(r.at("lemma1_worst_margin"));
    out.pass = out.pass && r.at("lemma1_holds") == "true" && m <= 1e-6;
    out.detail += "lemma1 worst margin " + fmt(m) + "; ";
  }
  double worst = -1e300;
  for (const auto& r : read_table(di / "sweep.csv"))
    if (r.at("cost_kind") == "shaped") worst = std::max(worst, num(r.at("C_constant")));
  out.pass = out.pass && worst <= 1e-3;
  out.detail += "max shaped C over gammas " + fmt(worst);
  return out;
}

Outcome criterion4(const std::vector<fs::path>& dirs) {
  int certified = 0, counterexamples = 0, total = 0;
  for (const auto& d : dirs)
    for (const auto& r : read_table(d / "certificates.csv")) {
      ++total;
      if (r.at("margin").empty() || !(num(r.at("margin")) > 0.0)) continue;
      ++certified;
      if (r.at("success_fraction").empty() || num(r.at("success_fraction")) != 1.0)
        ++counterexamples;
    }
  return {counterexamples == 0 && total > 0,
          std::to_string(total) + " certificates, " + std::to_string(certified) +
              " with margin > 0, " + std::to_string(counterexamples) + " counterexamples"};
}

// Random initial conditions near the origin under the (input-clipped) LQR
// law of each environment; only settling traces count.
Outcome criterion5() {
  Outcome out{true, ""};
  const RunningCost pend_cost{QuadraticForm::diagonal({1, 1}), QuadraticForm::diagonal({0.1})};
  struct Case {
    Environment env;
    RunningCost cost;
    double radius;
  };
  std::vector<Case> cases;
  cases.push_back({make_double_integrator(0.1), pend_cost, 1.0});
  cases.push_back({make_pendulum(0.1, 20), pend_cost, 0.4});
  cases.push_back({make_cartpole(0.05, 10),
                   {QuadraticForm::diagonal({1, 1, 0.1, 0.1}), QuadraticForm::diagonal({0.1})},
                   0.1});
  std::mt19937_64 rng(5);
  for (const Case& k : cases) {
    const DareSolution lqr = synthesize_clf(k.env, k.cost.Q.matrix(), k.cost.R.matrix());
    const QuadraticForm& W = lqr.value;
    const double H = k.env.input_bound()[0];
    const Controller ctrl = [&](const Vector& x) {
      Vector u = -lqr.gain * x;
      u[0] = std::clamp(u[0], -H, H);
      return u;
    };
    std::uniform_real_distribution<double> ic(-k.radius, k.radius);
    int used = 0, attempts = 0;
    double worst_identity = 0.0, worst_limit = 0.0;
    while (used < 50 && attempts < 5000) {
      ++attempts;
      Vector x0(k.env.state_dim());
      for (int d = 0; d < x0.size(); ++d) x0[d] = ic(rng);
      const RolloutTrace tr = rollout(k.env, ctrl, x0, 500, k.cost);
      if (tr.escaped || !trace_settles(tr, 0.05)) continue;
      ++used;
      for (double g : {0.0, 0.5, 0.9, 0.99}) {
        const double direct = trace_return(CostKind::kShaped, tr, g, k.cost, &W);
        worst_identity =
            std::max(worst_identity, std::abs(direct - telescoped_shaped_return(tr, g, k.cost, W)));
      }
      const double shaped = trace_return(CostKind::kShaped, tr, 1.0, k.cost, &W);
      const double standard = trace_return(CostKind::kStandard, tr, 1.0, k.cost);
      worst_limit = std::max(worst_limit, std::abs(shaped - standard + W(x0)));
    }
    const bool ok = used == 50 && worst_identity <= 1e-9 && worst_limit <= 1e-6;
    out.pass = out.pass && ok;
    out.detail += k.env.name() + ": " + std::to_string(used) + " rollouts, identity " +
                  fmt(worst_identity) + ", gamma=1 limit " + fmt(worst_limit) + "; ";
  }
  return out;
}

Outcome criterion6(const std::vector<fs::path>& dirs) {
  int shaped = 0, positivity_fail = 0, decrease_checked = 0, decrease_fail = 0;
  for (const auto& d : dirs)
    for (const auto& r : read_table(d / "certificates.csv")) {
      if (r.at("cost_kind") != "shaped") continue;
      ++shaped;
      if (r.at("composite_positivity") != "true") ++positivity_fail;
      if (!r.at("margin").empty() && num(r.at("margin")) > 0.0) {
        ++decrease_checked;
        if (r.at("composite_decrease") != "true") ++decrease_fail;
      }
    }
  return {shaped > 0 && positivity_fail == 0 && decrease_fail == 0,
          std::to_string(shaped) + " shaped policies, positivity failures " +
              std::to_string(positivity_fail) + "; " + std::to_string(decrease_checked) +
              " with margin > 0, decrease failures " + std::to_string(decrease_fail)};
}

Outcome criterion7(const std::vector<fs::path>& dirs, const fs::path& configs) {
  Outcome out{true, ""};
  std::set<std::string> envs;
  for (const auto& d : dirs)
    for (const auto& r : read_table(d / "domination.csv")) {
      if (std::abs(num(r.at("gamma")) - 0.99) > 1e-12) continue;
      envs.insert(r.at("env"));
      if (r.at("holds_on_grid") != "true") {
        out.pass = false;
        out.detail += r.at("env") + " H=" + r.at("H") + " violated by " +
                      fmt(num(r.at("worst_violation"))) + "; ";
      }
    }
  out.pass = out.pass && envs.size() == 3;
  out.detail += std::to_string(envs.size()) + " envs at gamma 0.99; ";
  // W = 0: shaped and standard fields coincide.
  for (const char* name : {"pendulum_quick.json", "double_integrator.json", "cartpole_demo.json"}) {
    ExperimentConfig c = load_config((configs / name).string());
    c.clf.source = "zero";
    const Problem p(c, c.env.input_bounds.front());
    const double g = 0.99;
    const SolveResult s =
        value_iteration(*p.model, CostKind::kStandard, g, c.solver.tol, c.solver.max_sweeps);
    const SolveResult t =
        value_iteration(*p.model, CostKind::kShaped, g, c.solver.tol, c.solver.max_sweeps);
    const double diff = sup_norm_diff(s.field.values, t.field.values);
    out.pass = out.pass && diff <= 2.0 * c.solver.tol;
    out.detail += c.env.name + " W=0 diff " + fmt(diff) + "; ";
  }
  return out;
}

Outcome criterion8(const fs::path& mpc_dir, const fs::path& configs) {
  Outcome out{true, ""};
  std::map<std::string, std::string> min_n;
  for (const auto& r : read_table(mpc_dir / "mpc_summary.csv"))
    if (num(r.at("H")) == 20.0) min_n[r.at("terminal")] = r.at("min_stabilizing_horizon");
  const std::string clf = min_n["clf"], zero = min_n["zero"];
  out.pass = !clf.empty() && (zero.empty() || std::stoi(clf) <= std::stoi(zero));
  out.detail = "min N clf " + (clf.empty() ? "none" : clf) + " <= zero " +
               (zero.empty() ? "none" : zero) + "; ";
  const ExperimentConfig c = load_config((configs / "pendulum_mpc.json").string());
  const Problem p(c, 20.0);
  const SolveResult mpc = finite_horizon_value(*p.model, 0, true);
  const SolveResult vi = value_iteration(*p.model, CostKind::kShaped, 0.0, c.solver.tol, 10);
  const bool same = mpc.policy == vi.policy;
  out.pass = out.pass && same;
  out.detail += std::string("N=0 CLF policy ") + (same ? "==" : "!=") + " gamma=0 shaped policy";
  return out;
}

Outcome criterion9(const Runner& run, const fs::path& configs) {
  const std::string cfg = (configs / "pendulum_quick.json").string();
  const fs::path a = run.work() / "det_t1", b = run.work() / "det_t2";
  const int ra = run.cli("sweep --config \"" + cfg + "\" --threads 1 --force --out \"" +
                             a.string() + "\"", "det_t1.log").first;
  const int rb = run.cli("sweep --config \"" + cfg + "\" --threads 2 --force --out \"" +
                             b.string() + "\"", "det_t2.log").first;
  if (ra != 0 || rb != 0) return {false, "CLI exit codes " + std::to_string(ra) + "/" + std::to_string(rb)};
  int compared = 0;
  std::vector<std::string> differing;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file() || e.path().filename() == "timing.csv") continue;
    const fs::path rel = fs::relative(e.path(), a);
    ++compared;
    if (!fs::exists(b / rel) || slurp(e.path()) != slurp(b / rel)) differing.push_back(rel.string());
  }
  std::string detail = std::to_string(compared) + " files compared (timing.csv excluded)";
  for (const auto& d : differing) detail += "; differs: " + d;
  return {compared > 0 && differing.empty(), detail};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance run"};
  std::string configs, cli, work;
  std::vector<int> expect_fail;
  app.add_option("--configs", configs)->required();
  app.add_option("--cli", cli)->required();
  app.add_option("--work", work)->required();
  app.add_option("--expect-fail", expect_fail, "criteria known to fail (documented)");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);
  const Runner run(cli, work);
  const fs::path cfg(configs), w(work);

  std::map<int, Outcome> results;
  auto record = [&](int id, auto&& fn) {
    try {
      results[id] = fn();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("error: ") + e.what()};
    }
    const Outcome& o = results[id];
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << ": " << o.detail
              << std::endl;
  };

  auto sweep = [&](const std::string& name, const std::string& out) {
    return run.cli("sweep --config \"" + (cfg / name).string() + "\" --force --out \"" +
                       (w / out).string() + "\"", out + ".log");
  };
  const auto [pend_rc, pend_secs] = sweep("pendulum_sweep.json", "pendulum_sweep");
  const auto [di_rc, di_secs] = sweep("double_integrator.json", "double_integrator");
  const auto [cp_rc, cp_secs] = sweep("cartpole_demo.json", "cartpole_demo");
  const int mpc_rc = run.cli("mpc --config \"" + (cfg / "pendulum_mpc.json").string() +
                                 "\" --force --out \"" + (w / "pendulum_mpc").string() + "\"",
                             "pendulum_mpc.log").first;
  std::cout << "sweeps: pendulum rc " << pend_rc << " (" << fmt(pend_secs) << " s), "
            << "double integrator rc " << di_rc << " (" << fmt(di_secs) << " s), "
            << "cartpole rc " << cp_rc << " (" << fmt(cp_secs) << " s), mpc rc " << mpc_rc
            << std::endl;
  const std::vector<fs::path> dirs{w / "pendulum_sweep", w / "double_integrator",
                                   w / "cartpole_demo"};
  const bool sweeps_ok = pend_rc == 0 && di_rc == 0 && cp_rc == 0;
  auto require = [](bool ok, Outcome o) {
    if (!ok) {
      o.pass = false;
      o.detail += " (a sweep reported failed cells)";
    }
    return o;
  };

  record(1, [&] { return criterion1(cfg); });
  record(2, [&] { return require(pend_rc == 0, criterion2(w / "pendulum_sweep", pend_secs)); });
  record(3, [&] { return require(di_rc == 0, criterion3(w / "double_integrator")); });
  record(4, [&] { return require(sweeps_ok, criterion4(dirs)); });
  record(5, [&] { return criterion5(); });
  record(6, [&] { return require(sweeps_ok, criterion6(dirs)); });
  record(7, [&] { return require(sweeps_ok, criterion7(dirs, cfg)); });
  record(8, [&] { return require(mpc_rc == 0, criterion8(w / "pendulum_mpc", cfg)); });
  record(9, [&] { return criterion9(run, cfg); });
  record(10, [&]() -> Outcome {
    return {true, "informational: learning-curve epochs, legged tracking errors and hardware "
                  "success rates are not targeted"};
  });

  std::set<int> failed;
  for (const auto& [id, o] : results)
    if (!o.pass) failed.insert(id);
  const std::set<int> expected(expect_fail.begin(), expect_fail.end());
  std::cout << failed.size() << " of " << results.size() << " criteria failed";
  if (!expected.empty()) {
    std::cout << " (expected:";
    for (int id : expected) std::cout << " " << id;
    std::cout << ")";
  }
  std::cout << std::endl;
  return failed == expected ? 0 : 1;
}
