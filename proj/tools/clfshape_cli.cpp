// Command-line driver: one JSON config drives every subcommand.
//
// Exit codes: 0 success, 1 cell failures or runtime error, 2 invalid config
// or invocation.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "clfshape/clfshape.hpp"

namespace fs = std::filesystem;
using namespace clfshape;

namespace {

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  bool force = false;
};

struct CellArgs {
  std::optional<double> bound;
  std::optional<std::string> kind;
  std::optional<double> gamma;
  int rank = 1;
};

void add_common(CLI::App* cmd, CommonArgs& a) {
  cmd->add_option("--config", a.config_path, "experiment config (JSON)")->required();
  cmd->add_option("--out", a.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", a.seed, "rollout seed (overrides config)");
  cmd->add_option("--threads", a.threads, "worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--force", a.force, "overwrite existing outputs");
}

void add_cell(CLI::App* cmd, CellArgs& a) {
  cmd->add_option("--bound", a.bound, "input bound H (default: first configured)");
  cmd->add_option("--kind", a.kind, "standard or shaped (default: first configured)");
  cmd->add_option("--gamma", a.gamma, "discount factor (default: first configured)");
  cmd->add_option("--rank", a.rank, "input rank of the rollout policy (1 = optimal)")
      ->check(CLI::PositiveNumber);
}

ExperimentConfig load(const CommonArgs& a) {
  ExperimentConfig c = load_config(a.config_path);
  if (!a.out_dir.empty()) c.out_dir = a.out_dir;
  if (a.seed) c.seed = *a.seed;
  if (a.threads) c.threads = *a.threads;
  validate(c);
  return c;
}

struct Cell {
  double H;
  CostKind kind;
  double gamma;
};

Cell pick_cell(const ExperimentConfig& c, const CellArgs& a) {
  Cell cell{a.bound.value_or(c.env.input_bounds.front()),
            parse_cost_kind(a.kind.value_or(c.cost_kinds.front())),
            a.gamma.value_or(c.gamma_list.front())};
  if (!(cell.H > 0.0)) throw ConfigError("--bound must be positive");
  if (!(cell.gamma >= 0.0 && cell.gamma <= 0.999)) throw ConfigError("--gamma must lie in [0, 0.999]");
  if (a.rank > c.input_count) throw ConfigError("--rank exceeds input_count");
  return cell;
}

int cmd_solve(const CommonArgs& args, const CellArgs& cell_args) {
  const ExperimentConfig c = load(args);
  const Cell cell = pick_cell(c, cell_args);
  prepare_output_dir(c.out_dir, {"value.csv", "value.json"}, args.force);
  const Problem p(c, cell.H);
  const SolveResult r =
      value_iteration(*p.model, cell.kind, cell.gamma, c.solver.tol, c.solver.max_sweeps);
  write_field((fs::path(c.out_dir) / "value").string(), p.model->grid(), r.field, &r.policy,
              {{"env", c.env.name}, {"H", cell.H}});
  std::cout << c.env.name << " H=" << cell.H << " " << to_string(cell.kind)
            << " gamma=" << cell.gamma << ": " << r.field.sweeps
            << " sweeps, residual " << r.field.bellman_residual << ", C="
            << estimate_growth_constant(r.field, p.cost.Q, p.model->grid(),
                                        c.solver.exclusion_radius)
            << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& args) {
  const ExperimentConfig c = load(args);
  SweepWriter writer(c.out_dir, args.force);
  const SweepReport report = run_sweep(c, &writer, &std::cerr);
  for (const auto& s : report.summary)
    std::cout << s.env << " H=" << s.H << " " << s.cost_kind << ": min stabilizing gamma "
              << (s.min_stabilizing_gamma ? csv::cell(*s.min_stabilizing_gamma) : "none")
              << "\n";
  return report.failures > 0 ? 1 : 0;
}

int cmd_mpc(const CommonArgs& args) {
  const ExperimentConfig c = load(args);
  MpcWriter writer(c.out_dir, args.force);
  const MpcReport report = run_mpc_sweep(c, &writer, &std::cerr);
  for (const auto& s : report.summary)
    std::cout << s.env << " H=" << s.H << " terminal=" << s.terminal << ": min stabilizing N "
              << (s.min_stabilizing_horizon ? std::to_string(*s.min_stabilizing_horizon) : "none")
              << "\n";
  return report.failures > 0 ? 1 : 0;
}

int cmd_rollout(const CommonArgs& args, const CellArgs& cell_args) {
  const ExperimentConfig c = load(args);
  const Cell cell = pick_cell(c, cell_args);
  prepare_output_dir(c.out_dir, {"rollouts.csv", "rollout_summary.csv"}, args.force);
  const Problem p(c, cell.H);
  const SolveResult r =
      value_iteration(*p.model, cell.kind, cell.gamma, c.solver.tol, c.solver.max_sweeps);
  const LookaheadController controller(
      *p.model, bellman_terms(cell.kind, cell.gamma, &r.field.values), cell_args.rank);
  const int steps = static_cast<int>(std::lround(c.rollout.horizon_seconds / p.env.dt()));
  const int n = p.env.state_dim();
  std::ofstream traces(fs::path(c.out_dir) / "rollouts.csv");
  std::ofstream summary(fs::path(c.out_dir) / "rollout_summary.csv");
  traces << "trial,step";
  summary << "trial";
  for (int d = 0; d < n; ++d) {
    traces << ",x" << d;
    summary << ",x0_" << d;
  }
  traces << ",u0,running_cost\n";
  summary << ",settled\n";
  int successes = 0;
  const auto ics = initial_conditions(c);
  for (std::size_t t = 0; t < ics.size(); ++t) {
    const RolloutTrace tr = rollout(p.env, controller, ics[t], steps, p.cost);
    for (int k = 0; k <= tr.horizon_steps; ++k) {
      traces << t << ',' << k;
      for (int d = 0; d < n; ++d) traces << ',' << csv::cell(tr.states[k][d]);
      if (k < tr.horizon_steps)
        traces << ',' << csv::cell(tr.inputs[k][0]) << ',' << csv::cell(tr.running_costs[k]);
      else
        traces << ",,";
      traces << '\n';
    }
    const bool ok = trace_settles(tr, c.rollout.success_radius);
    successes += ok;
    summary << t;
    for (int d = 0; d < n; ++d) summary << ',' << csv::cell(ics[t][d]);
    summary << ',' << csv::cell(ok) << '\n';
  }
  std::cout << successes << "/" << ics.size() << " rollouts settled\n";
  return 0;
}

int cmd_verify_clf(const CommonArgs& args) {
  const ExperimentConfig c = load(args);
  prepare_output_dir(c.out_dir, {"clf.csv"}, args.force);
  CsvFile out((fs::path(c.out_dir) / "clf.csv").string(), kClfHeader);
  for (double H : c.env.input_bounds) {
    const Problem p(c, H);
    const ClfRow row = clf_row(c, p);
    out.line(format_row(row));
    std::cout << c.env.name << " H=" << H << ": clf on grid " << csv::cell(row.is_clf_on_grid)
              << ", violating fraction " << row.fraction_violating << ", lemma 1 "
              << csv::cell(row.lemma1_holds) << " (worst margin " << row.lemma1_worst_margin
              << ")\n";
  }
  return 0;
}

int cmd_report(const CommonArgs& args) {
  const ExperimentConfig c = load(args);
  const fs::path dir(c.out_dir);
  const auto rows = read_sweep_csv((dir / "sweep.csv").string());
  std::vector<DominationRow> domination;
  if (fs::exists(dir / "domination.csv"))
    domination = read_domination_csv((dir / "domination.csv").string());
  prepare_output_dir(c.out_dir, {"summary.csv"}, args.force);
  const auto summary = summarize(rows, domination);
  CsvFile out((dir / "summary.csv").string(), kSummaryHeader);
  for (const auto& s : summary) {
    out.line(format_row(s));
    std::cout << format_row(s) << "\n";
  }
  int failures = 0;
  for (const auto& r : rows) failures += r.status != "ok";
  return failures > 0 ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CLF cost shaping for discounted optimal control"};
  app.require_subcommand(1);
  CommonArgs common;
  CellArgs cell;
  auto* solve = app.add_subcommand("solve", "value iteration for one cell; writes value.csv/json");
  auto* sweep = app.add_subcommand("sweep", "discount-factor sweep with certificates");
  auto* mpc = app.add_subcommand("mpc", "prediction-horizon sweep, CLF vs zero terminal cost");
  auto* roll = app.add_subcommand("rollout", "closed-loop rollouts for one cell");
  auto* verify = app.add_subcommand("verify-clf", "grid CLF and Lemma 1 checks per bound");
  auto* report = app.add_subcommand("report", "rebuild summary.csv from sweep outputs");
  for (auto* cmd : {solve, sweep, mpc, roll, verify, report}) add_common(cmd, common);
  add_cell(solve, cell);
  add_cell(roll, cell);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*solve) return cmd_solve(common, cell);
    if (*sweep) return cmd_sweep(common);
    if (*mpc) return cmd_mpc(common);
    if (*roll) return cmd_rollout(common, cell);
    if (*verify) return cmd_verify_clf(common);
    if (*report) return cmd_report(common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
