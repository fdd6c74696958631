#pragma once

#include <chrono>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "clfshape/analysis.hpp"
#include "clfshape/clf.hpp"
#include "clfshape/config.hpp"
#include "clfshape/gridsolve.hpp"
#include "clfshape/report.hpp"

namespace clfshape {

/// Environment, CLF and discretized model for one input bound H. Heap
/// allocated so the model's environment pointer stays valid.
struct Problem {
  double H = 0.0;
  Environment env;
  QuadraticForm W;
  RunningCost cost;
  std::unique_ptr<BellmanModel> model;

  Problem(const ExperimentConfig& c, double input_bound)
      : H(input_bound),
        env(make_environment(c.env, input_bound)),
        W(make_clf(c, env)),
        cost(make_running_cost(c.cost)) {
    SolverOptions opts;
    opts.escape_penalty = c.solver.escape_penalty;
    opts.refine_inputs = c.solver.refine_inputs;
    opts.threads = c.threads;
    model = std::make_unique<BellmanModel>(
        env, GridSpec::for_environment(env, c.grid.counts, c.grid.stretch),
        InputSet::for_environment(env, c.input_count), cost, W, opts);
  }
  Problem(const Problem&) = delete;
  Problem& operator=(const Problem&) = delete;
};

inline RolloutProtocol make_protocol(const ExperimentConfig& c) {
  RolloutProtocol p;
  p.n_trials = c.rollout.n_trials;
  p.horizon_seconds = c.rollout.horizon_seconds;
  p.success_radius = c.rollout.success_radius;
  p.ic_lo = to_vector(c.rollout.ic_lo);
  p.ic_hi = to_vector(c.rollout.ic_hi);
  p.seed = c.seed;
  p.threads = c.threads;
  return p;
}

/// Seeded initial conditions shared by every cell of a run.
inline std::vector<Vector> initial_conditions(const ExperimentConfig& c) {
  return sample_initial_conditions(to_vector(c.rollout.ic_lo), to_vector(c.rollout.ic_hi),
                                   c.rollout.n_trials, c.seed);
}

inline ClfRow clf_row(const ExperimentConfig& c, const Problem& p) {
  const BellmanModel& m = *p.model;
  const ClfVerdict v = verify_clf_on_grid(p.W, p.env, m.grid(), m.inputs(),
                                          c.solver.exclusion_radius, c.solver.refine_inputs);
  const Lemma1Result l = check_lemma1_condition(p.W, p.env, m.grid(), m.inputs(), p.cost, 1e-6,
                                                c.solver.refine_inputs);
  return {c.env.name, p.H, v.is_clf_on_grid, v.fraction_violating, v.worst_decrease, l.holds,
          l.worst_margin};
}

inline std::string stem_for(const std::string& env, double H, const std::string& kind,
                            double gamma) {
  return env + "_H" + format_double(H) + "_" + kind + "_g" + format_double(gamma);
}

/// Everything computed for one (H, cost kind, gamma) cell.
struct CellResult {
  SweepRow row;
  std::vector<CertificateRow> certificates;
  std::optional<ValueField> v_star;
  bool failed = false;
};

inline CellResult run_cell(const ExperimentConfig& c, const Problem& p, CostKind kind,
                           double gamma, const std::vector<Vector>& ics) {
  const auto t0 = std::chrono::steady_clock::now();
  const BellmanModel& m = *p.model;
  const std::string kind_name = to_string(kind);
  const double excl = c.solver.exclusion_radius;
  CellResult cell;
  SweepRow& row = cell.row;
  row.env = c.env.name;
  row.H = p.H;
  row.cost_kind = kind_name;
  row.gamma = gamma;
  try {
    SolveResult solved = value_iteration(m, kind, gamma, c.solver.tol, c.solver.max_sweeps);
    const ValueField& v_star = solved.field;
    row.sweeps = v_star.sweeps;
    row.bellman_residual = v_star.bellman_residual;
    const double C = estimate_growth_constant(v_star, p.cost.Q, m.grid(), excl);
    row.C_constant = C;
    if (c.dump_fields) {
      const auto dir = std::filesystem::path(c.out_dir) / "fields";
      std::filesystem::create_directories(dir);
      write_field((dir / stem_for(c.env.name, p.H, kind_name, gamma)).string(), m.grid(), v_star,
                  &solved.policy, {{"env", c.env.name}, {"H", p.H}});
    }
    const BackupTerms terms = bellman_terms(kind, gamma, &v_star.values);
    for (int rank : c.suboptimal_ranks) {
      CertificateRow cert;
      cert.env = c.env.name;
      cert.H = p.H;
      cert.cost_kind = kind_name;
      cert.gamma = gamma;
      cert.rank = rank;
      cert.C_constant = C;
      try {
        const TabularPolicy policy = make_suboptimal(m, v_star, solved.policy, rank);
        const ValueField v_pi = policy_evaluation(m, kind, gamma, policy, c.solver.eval_tol);
        const double delta = estimate_gap_ratio(optimality_gap(v_pi, v_star), p.cost.Q,
                                                m.grid(), excl);
        cert.delta = delta;
        cert.margin = condition_margin(gamma, C, delta);
        cert.predicted_stable = *cert.margin > 0.0;
        const LookaheadController controller(m, terms, rank);
        const EmpiricalRecord rec =
            certify_stability(p.env, controller, ics, c.rollout.horizon_seconds,
                              c.rollout.success_radius, c.threads);
        cert.n_success = rec.n_success;
        cert.n_trials = rec.n_trials;
        cert.success_fraction = rec.success_fraction();
        if (kind == CostKind::kShaped) {
          const CompositeCheck comp = check_composite(m, v_pi, policy, excl, 2.0 * c.solver.tol);
          cert.composite_positivity = comp.positivity_holds;
          cert.composite_worst_positivity = comp.worst_positivity;
          cert.composite_decrease = comp.decrease_holds;
          cert.composite_worst_decrease = comp.worst_decrease;
        }
      } catch (const std::exception& e) {
        cert.status = e.what();
        cell.failed = true;
      }
      if (rank == 1) {
        row.margin = cert.margin;
        row.predicted_stable = cert.predicted_stable;
        row.rollout_success_fraction = cert.success_fraction;
      }
      if (rank == 2) row.delta_rank2 = cert.delta;
      cell.certificates.push_back(std::move(cert));
    }
    cell.v_star = std::move(solved.field);
  } catch (const std::exception& e) {
    row.status = e.what();
    cell.failed = true;
  }
  if (cell.failed && row.status == "ok") row.status = "certificate failure";
  row.wall_time_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return cell;
}

/// Full sweep over input bounds, cost kinds and discount factors. Rows are
/// streamed to `writer` (if any) as cells finish; a failing cell is recorded
/// in its row and the sweep continues.
inline SweepReport run_sweep(const ExperimentConfig& c, SweepWriter* writer = nullptr,
                             std::ostream* log = nullptr) {
  validate(c);
  SweepReport report;
  const std::vector<Vector> ics = initial_conditions(c);
  for (double H : c.env.input_bounds) {
    const Problem p(c, H);
    report.clf.push_back(clf_row(c, p));
    if (writer) writer->add(report.clf.back());
    // gamma -> V* per cost kind, for the domination comparison
    std::map<double, ValueField> standard, shaped;
    for (const auto& kind_name : c.cost_kinds) {
      const CostKind kind = parse_cost_kind(kind_name);
      for (double gamma : c.gamma_list) {
        CellResult cell = run_cell(c, p, kind, gamma, ics);
        if (cell.failed) ++report.failures;
        if (log)
          *log << c.env.name << " H=" << H << " " << kind_name << " gamma=" << gamma
               << " success=" << csv::cell(cell.row.rollout_success_fraction)
               << " margin=" << csv::cell(cell.row.margin) << " (" << cell.row.status << ", "
               << cell.row.wall_time_s << " s)\n";
        if (writer) {
          writer->add(cell.row);
          for (const auto& cert : cell.certificates) writer->add(cert);
        }
        report.rows.push_back(std::move(cell.row));
        for (auto& cert : cell.certificates) report.certificates.push_back(std::move(cert));
        if (cell.v_star)
          (kind == CostKind::kStandard ? standard : shaped)[gamma] = std::move(*cell.v_star);
      }
    }
    for (double gamma : c.gamma_list) {
      auto s = standard.find(gamma);
      auto t = shaped.find(gamma);
      if (s == standard.end() || t == shaped.end()) continue;
      const DominationVerdict v = check_domination(s->second, t->second);
      report.domination.push_back({c.env.name, H, gamma, v.holds_on_grid, v.worst_violation});
      if (writer) writer->add(report.domination.back());
    }
  }
  report.summary = summarize(report.rows, report.domination);
  if (writer) writer->finish(report.summary);
  return report;
}

/// Terms of the implicit MPC law for horizon N: greedy for J_N.
inline BackupTerms mpc_terms(bool clf_terminal, int horizon, const std::vector<double>& J) {
  BackupTerms t;
  t.gamma = 1.0;
  if (horizon == 0) {
    t.add_w_next = clf_terminal;
  } else {
    t.next = &J;
  }
  return t;
}

/// Minimum stabilizing prediction horizon with a CLF terminal cost versus no
/// terminal cost, on the standard running cost.
inline MpcReport run_mpc_sweep(const ExperimentConfig& c, MpcWriter* writer = nullptr,
                               std::ostream* log = nullptr) {
  validate(c);
  MpcReport report;
  const std::vector<Vector> ics = initial_conditions(c);
  for (double H : c.env.input_bounds) {
    const Problem p(c, H);
    for (const auto& terminal : c.mpc.terminals) {
      const bool clf_terminal = terminal == "clf";
      for (int N : c.mpc.horizons) {
        MpcRow row;
        row.env = c.env.name;
        row.H = H;
        row.terminal = terminal;
        row.horizon = N;
        row.degenerate = N == 0 && !clf_terminal;
        try {
          const SolveResult solved = finite_horizon_value(*p.model, N, clf_terminal);
          const LookaheadController controller(*p.model,
                                               mpc_terms(clf_terminal, N, solved.field.values));
          const EmpiricalRecord rec =
              certify_stability(p.env, controller, ics, c.rollout.horizon_seconds,
                                c.rollout.success_radius, c.threads);
          row.n_success = rec.n_success;
          row.n_trials = rec.n_trials;
          row.success_fraction = rec.success_fraction();
        } catch (const std::exception& e) {
          row.status = e.what();
          ++report.failures;
        }
        if (log)
          *log << c.env.name << " H=" << H << " terminal=" << terminal << " N=" << N
               << " success=" << csv::cell(row.success_fraction)
               << (row.degenerate ? " (degenerate)" : "") << "\n";
        if (writer) writer->add(row);
        report.rows.push_back(std::move(row));
      }
    }
  }
  report.summary = summarize(report.rows);
  if (writer) writer->finish(report.summary);
  return report;
}

}  // namespace clfshape
