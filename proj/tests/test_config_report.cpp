#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "clfshape/experiment.hpp"

using namespace clfshape;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

fs::path fresh_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("clfshape_test_" + name);
  fs::remove_all(d);
  return d;
}

// Small, fast double-integrator experiment.
ExperimentConfig tiny_config(const fs::path& out) {
  ExperimentConfig c = default_config("double_integrator");
  c.grid.counts = {21, 21};
  c.grid.stretch = {0, 0};
  c.input_count = 21;
  c.gamma_list = {0.0, 0.9};
  c.suboptimal_ranks = {1, 2};
  c.rollout.n_trials = 4;
  c.rollout.horizon_seconds = 10;
  c.seed = 3;
  c.out_dir = out.string();
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

TEST(Config, DefaultGammaList) {
  const auto g = default_gamma_list();
  ASSERT_EQ(g.size(), 21u);
  EXPECT_EQ(g.front(), 0.0);
  EXPECT_EQ(g[1], 0.05);
  EXPECT_EQ(g[19], 0.95);
  EXPECT_EQ(g.back(), 0.99);
}

TEST(Config, DefaultsValidateForEveryEnvironment) {
  for (const char* name : {"pendulum", "double_integrator", "cartpole"}) {
    const ExperimentConfig c = default_config(name);
    EXPECT_NO_THROW(validate(c)) << name;
    EXPECT_EQ(parse_config(serialize_config(c)), c) << name;
  }
  EXPECT_THROW(default_config("acrobot"), ConfigError);
}

TEST(Config, PendulumDefaults) {
  const ExperimentConfig c = default_config("pendulum");
  EXPECT_EQ(c.env.input_bounds, (std::vector<double>{20, 7, 4}));
  EXPECT_EQ(c.grid.counts, (std::vector<int>{101, 101}));
  EXPECT_EQ(c.input_count, 41);
  EXPECT_EQ(c.gamma_list, default_gamma_list());
  EXPECT_EQ(c.rollout.n_trials, 20);
  EXPECT_EQ(c.rollout.horizon_seconds, 20.0);
  EXPECT_EQ(c.rollout.success_radius, 0.05);
}

TEST(Config, RoundTripOfShippedConfigs) {
  for (const auto& entry : fs::directory_iterator(CLFSHAPE_CONFIG_DIR)) {
    if (entry.path().extension() != ".json") continue;
    const ExperimentConfig c = load_config(entry.path().string());
    EXPECT_EQ(parse_config(serialize_config(c)), c) << entry.path();
  }
}

TEST(Config, RoundTripOfUnusualValues) {
  ExperimentConfig c = default_config("cartpole");
  c.env.params["pole_length"] = 0.6;
  c.gamma_list = {0.1, 0.3, 0.7, 0.999};
  c.seed = 18446744073709551615ull;
  c.solver.tol = 3.3e-7;
  c.clf.source = "file";
  c.clf.file = "w,\"odd\".csv";
  c.mpc.horizons = {0, 4};
  c.mpc.terminals = {"zero"};
  c.dump_fields = true;
  EXPECT_EQ(parse_config(serialize_config(c)), c);
}

TEST(Config, MissingKeysTakeEnvironmentDefaults) {
  const ExperimentConfig c = parse_config(R"({"env": {"name": "double_integrator"}})");
  EXPECT_EQ(c, default_config("double_integrator"));
  const ExperimentConfig d = parse_config(R"({"grid": {"counts": [51, 51]}})");
  EXPECT_EQ(d.grid.counts, (std::vector<int>{51, 51}));
  EXPECT_EQ(d.grid.stretch, (std::vector<double>{0, 0}));
}

TEST(Config, InvalidConfigsAreRejected) {
  const char* bad[] = {
      R"({"gamma_list": [0.5, 1.0]})",
      R"({"gamma_list": [-0.1]})",
      R"({"gamma_list": []})",
      R"({"bogus": 1})",
      R"({"env": {"name": "pendulum", "colour": "red"}})",
      R"({"env": {"name": "pendulum", "params": {"inertia": 1}}})",
      R"({"env": {"name": "unicycle"}})",
      R"({"env": {"input_bounds": [0]}})",
      R"({"grid": {"counts": [100, 101]}})",
      R"({"grid": {"counts": [101]}})",
      R"({"input_count": 40})",
      R"({"cost": {"q_diag": [1, -1]}})",
      R"({"clf": {"source": "magic"}})",
      R"({"clf": {"source": "file"}})",
      R"({"cost_kinds": ["fancy"]})",
      R"({"rollout": {"n_trials": 0}})",
      R"({"rollout": {"ic_lo": [1, 1], "ic_hi": [0, 0]}})",
      R"({"suboptimal_ranks": [42]})",
      R"({"mpc": {"terminals": ["lqr"]}})",
      R"({"threads": 0})",
      R"({"seed": "abc"})",
      R"([1, 2, 3])",
      "{not json",
  };
  for (const char* text : bad) EXPECT_THROW(parse_config(text), ConfigError) << text;
}

TEST(Config, FactoriesFollowTheConfig) {
  ExperimentConfig c = default_config("pendulum");
  const Environment env = make_environment(c.env, 7);
  EXPECT_EQ(env.name(), "pendulum");
  EXPECT_EQ(env.input_bound()[0], 7.0);
  const RunningCost cost = make_running_cost(c.cost);
  EXPECT_EQ(cost.Q.matrix(), (Matrix{{1, 0}, {0, 1}}));
  EXPECT_TRUE(make_clf(c, env).is_positive_definite());
  c.clf.source = "zero";
  EXPECT_TRUE(make_clf(c, env).is_zero());
  const fs::path dir = fresh_dir("clf_file");
  fs::create_directories(dir);
  const QuadraticForm W(Matrix{{3, 1}, {1, 2}});
  write_quadratic_csv(W, (dir / "w.csv").string());
  c.clf.source = "file";
  c.clf.file = (dir / "w.csv").string();
  EXPECT_EQ(make_clf(c, env), W);
}

// ---------------------------------------------------------------------------
// CSV and reports

TEST(Csv, CellsAndQuoting) {
  EXPECT_EQ(csv::cell(0.1), "0.10000000000000001");
  EXPECT_EQ(csv::cell(std::numeric_limits<double>::infinity()), "inf");
  EXPECT_EQ(csv::cell(true), "true");
  EXPECT_EQ(csv::cell(std::string("a,b")), "\"a,b\"");
  const auto cells = csv::split(csv::join({"x", csv::cell(std::string("say \"hi\", ok")), ""}));
  EXPECT_EQ(cells, (std::vector<std::string>{"x", "say \"hi\", ok", ""}));
  EXPECT_EQ(std::stod(csv::cell(0.1)), 0.1);
}

TEST(Report, EmptyReportWritesHeadersOnly) {
  const fs::path dir = fresh_dir("empty");
  emit_report(SweepReport{}, dir.string(), false);
  EXPECT_EQ(slurp(dir / "sweep.csv"), std::string(kSweepHeader) + "\n");
  EXPECT_EQ(slurp(dir / "summary.csv"), std::string(kSummaryHeader) + "\n");
  EXPECT_EQ(slurp(dir / "timing.csv"), std::string(kTimingHeader) + "\n");
}

TEST(Report, OneRowHasTheTypedColumns) {
  SweepReport r;
  SweepRow row;
  row.env = "pendulum";
  row.H = 20;
  row.cost_kind = "shaped";
  row.gamma = 0.5;
  row.sweeps = 12;
  row.margin = 1.5;
  row.predicted_stable = true;
  row.rollout_success_fraction = 1.0;
  r.rows.push_back(row);
  const fs::path dir = fresh_dir("one");
  emit_report(r, dir.string(), false);
  EXPECT_EQ(slurp(dir / "sweep.csv"),
            std::string(kSweepHeader) + "\npendulum,20,shaped,0.5,12,,,,1.5,true,1,ok\n");
  const auto back = read_sweep_csv((dir / "sweep.csv").string());
  ASSERT_EQ(back.size(), 1u);
  EXPECT_EQ(back[0].sweeps, 12);
  EXPECT_EQ(back[0].margin, 1.5);
  EXPECT_FALSE(back[0].C_constant.has_value());
}

TEST(Report, RefusesToOverwriteWithoutForce) {
  const fs::path dir = fresh_dir("overwrite");
  emit_report(SweepReport{}, dir.string(), false);
  EXPECT_THROW(emit_report(SweepReport{}, dir.string(), false), Error);
  EXPECT_NO_THROW(emit_report(SweepReport{}, dir.string(), true));
}

TEST(Report, SummaryPicksSmallestStabilizingGamma) {
  std::vector<SweepRow> rows;
  for (double H : {20.0, 7.0, 4.0})
    for (const char* kind : {"standard", "shaped"})
      for (double g : {0.0, 0.5, 0.9, 0.99}) {
        SweepRow r;
        r.env = "pendulum";
        r.H = H;
        r.cost_kind = kind;
        r.gamma = g;
        const bool shaped = std::string(kind) == "shaped";
        r.rollout_success_fraction = (shaped ? g >= 0.5 : g >= 0.9) ? 1.0 : 0.95;
        r.predicted_stable = g >= 0.99;
        rows.push_back(r);
      }
  const std::vector<DominationRow> dom{{"pendulum", 20, 0.9, true, -1},
                                       {"pendulum", 20, 0.5, false, 2},
                                       {"pendulum", 20, 0.99, true, -1}};
  const auto s = summarize(rows, dom);
  ASSERT_EQ(s.size(), 6u);
  EXPECT_EQ(s[0].cost_kind, "standard");
  EXPECT_EQ(s[0].min_stabilizing_gamma, 0.9);
  EXPECT_EQ(s[1].min_stabilizing_gamma, 0.5);
  EXPECT_EQ(s[1].min_predicted_gamma, 0.99);
  EXPECT_EQ(s[0].gamma_bar, 0.9);
  EXPECT_FALSE(s[2].gamma_bar.has_value());
}

TEST(Report, MpcSummaryExcludesDegenerateRows) {
  std::vector<MpcRow> rows;
  auto add = [&](const char* terminal, int N, double frac, bool degenerate) {
    MpcRow r;
    r.env = "pendulum";
    r.H = 20;
    r.terminal = terminal;
    r.horizon = N;
    r.success_fraction = frac;
    r.degenerate = degenerate;
    rows.push_back(r);
  };
  add("clf", 0, 1.0, false);
  add("zero", 0, 1.0, true);
  add("zero", 5, 0.5, false);
  add("zero", 8, 1.0, false);
  const auto s = summarize(rows);
  ASSERT_EQ(s.size(), 2u);
  EXPECT_EQ(s[0].min_stabilizing_horizon, 0);
  EXPECT_EQ(s[1].min_stabilizing_horizon, 8);
}

TEST(Report, FieldDumpHasRowsAndSidecar) {
  const fs::path dir = fresh_dir("field");
  fs::create_directories(dir);
  const GridSpec g = GridSpec::make({3, 3}, {-1, -1}, {1, 1}, {false, false});
  ValueField f;
  f.values = std::vector<double>(9, 0.25);
  f.gamma = 0.5;
  TabularPolicy p;
  p.index.assign(9, 2);
  p.input.assign(9, Vector{{1.5}});
  write_field((dir / "v").string(), g, f, &p, {{"env", "test"}});
  std::ifstream in(dir / "v.csv");
  std::string header, first;
  std::getline(in, header);
  std::getline(in, first);
  EXPECT_EQ(header, "node,i0,i1,x0,x1,value,input_index,u0");
  EXPECT_EQ(first, "0,0,0,-1,-1,0.25,2,1.5");
  const auto meta = nlohmann::json::parse(slurp(dir / "v.json"));
  EXPECT_EQ(meta["env"], "test");
  EXPECT_EQ(meta["gamma"], 0.5);
  EXPECT_EQ(meta["grid"]["coords"][0].size(), 3u);
}

// ---------------------------------------------------------------------------
// Orchestration

TEST(Sweep, OneRowPerCellAndDeterministicBytes) {
  const fs::path a = fresh_dir("sweep_a"), b = fresh_dir("sweep_b");
  ExperimentConfig c = tiny_config(a);
  {
    SweepWriter w(a.string(), false);
    const SweepReport r = run_sweep(c, &w);
    EXPECT_EQ(r.rows.size(), 4u);            // 2 kinds x 2 gammas
    EXPECT_EQ(r.certificates.size(), 8u);    // x 2 ranks
    EXPECT_EQ(r.domination.size(), 2u);
    EXPECT_EQ(r.summary.size(), 2u);
    EXPECT_EQ(r.failures, 0);
    for (const auto& row : r.rows) EXPECT_EQ(row.status, "ok");
  }
  c.out_dir = b.string();
  c.threads = 3;
  {
    SweepWriter w(b.string(), false);
    run_sweep(c, &w);
  }
  for (const char* f : {"sweep.csv", "certificates.csv", "domination.csv", "clf.csv", "summary.csv"})
    EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
}

TEST(Sweep, SingleCellGivesOneRow) {
  ExperimentConfig c = tiny_config(fresh_dir("single"));
  c.gamma_list = {0.5};
  c.cost_kinds = {"shaped"};
  const SweepReport r = run_sweep(c);
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].cost_kind, "shaped");
  EXPECT_TRUE(r.domination.empty());
}

TEST(Sweep, FailingCellIsRecordedAndSweepContinues) {
  ExperimentConfig c = tiny_config(fresh_dir("failing"));
  c.solver.max_sweeps = 2;  // gamma = 0.9 cannot converge
  const SweepReport r = run_sweep(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_EQ(r.rows[0].status, "ok");  // gamma = 0 converges in one sweep
  EXPECT_NE(r.rows[1].status, "ok");
  EXPECT_EQ(r.failures, 2);
}

TEST(Mpc, ZeroHorizonRowsAndSummary) {
  ExperimentConfig c = tiny_config(fresh_dir("mpc"));
  c.mpc.horizons = {0, 2};
  const MpcReport r = run_mpc_sweep(c);
  ASSERT_EQ(r.rows.size(), 4u);
  EXPECT_FALSE(r.rows[0].degenerate);
  EXPECT_TRUE(r.rows[2].degenerate);
  EXPECT_EQ(r.rows[2].terminal, "zero");
  ASSERT_EQ(r.summary.size(), 2u);
  EXPECT_EQ(r.summary[0].min_stabilizing_horizon, 0);  // greedy CLF law on a linear system
}
