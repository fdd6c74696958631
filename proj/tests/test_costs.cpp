#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "clfshape/costs.hpp"

using namespace clfshape;

namespace {

RunningCost default_cost() {
  return {QuadraticForm::diagonal({1, 1}), QuadraticForm::diagonal({0.1})};
}

// Trace built by hand: DI with dt = 0.1 from (1, 0) with inputs 1 then -1.
RolloutTrace hand_trace() {
  RolloutTrace tr;
  tr.states = {Vector{{1, 0}}, Vector{{1, 0.1}}, Vector{{1.01, 0}}};
  tr.inputs = {Vector{{1}}, Vector{{-1}}};
  tr.horizon_steps = 2;
  return tr;
}

}  // namespace

TEST(RunningCost, Examples) {
  const RunningCost c = default_cost();
  EXPECT_EQ(c(Vector::Zero(2), Vector::Zero(1)), 0.0);
  EXPECT_EQ(c(Vector{{1, 0}}, Vector::Zero(1)), 1.0);
  EXPECT_DOUBLE_EQ(c(Vector{{0, 2}}, Vector{{3}}), 4.0 + 0.9);
  EXPECT_EQ(eval_running(c, Vector{{1, 0}}, Vector::Zero(1)), 1.0);
}

TEST(ShapedCost, ZeroClfLeavesCostUnchanged) {
  const Environment env = make_pendulum(0.1, 20);
  const ShapedCost shaped{default_cost(), QuadraticForm::zero(2), &env};
  for (const Vector& x : {Vector{{0.3, -1}}, Vector{{-2.5, 4}}})
    for (double u : {-20.0, 0.0, 7.5})
      EXPECT_EQ(shaped(x, Vector{{u}}), default_cost()(x, Vector{{u}}));
}

TEST(ShapedCost, ZeroAtEquilibrium) {
  const Environment env = make_pendulum(0.1, 20);
  const ShapedCost shaped{default_cost(), QuadraticForm::diagonal({84.9, 8.6}), &env};
  EXPECT_EQ(eval_shaped(shaped, Vector::Zero(2), Vector::Zero(1)), 0.0);
}

TEST(ShapedCost, NegativeUnderLqrWithDoubledValue) {
  // With W = 2P and u = -Kx on a linear system, the DARE gives
  // W(F) - W(x) = -2 l(x, u), so the shaped cost is exactly -l(x, u).
  const Environment env = make_double_integrator(0.1);
  const RunningCost cost = default_cost();
  const DareSolution lqr = synthesize_clf(env, cost.Q.matrix(), cost.R.matrix());
  const ShapedCost shaped{cost, lqr.value.scaled(2.0), &env};
  for (const Vector& x : {Vector{{1, 0}}, Vector{{-0.5, 1.5}}, Vector{{0.2, -0.3}}}) {
    const Vector u = -lqr.gain * x;
    EXPECT_LT(shaped(x, u), 0.0);
    EXPECT_NEAR(shaped(x, u), -cost(x, u), 1e-9 * (1 + cost(x, u)));
  }
}

TEST(TraceReturn, HandComputedExample) {
  const RolloutTrace tr = hand_trace();
  const RunningCost cost = default_cost();
  const QuadraticForm W = QuadraticForm::diagonal({1, 1});
  // 1.1 + 0.5 * 1.11
  EXPECT_NEAR(trace_return(CostKind::kStandard, tr, 0.5, cost), 1.655, 1e-15);
  // (1.01 - 1 + 1.1) + 0.5 * (1.0201 - 1.01 + 1.11)
  EXPECT_NEAR(trace_return(CostKind::kShaped, tr, 0.5, cost, &W), 1.67005, 1e-14);
  EXPECT_NEAR(telescoped_shaped_return(tr, 0.5, cost, W), 1.67005, 1e-14);
}

TEST(TraceReturn, ZeroDiscountIsFirstStage) {
  const RolloutTrace tr = hand_trace();
  EXPECT_EQ(trace_return(CostKind::kStandard, tr, 0.0, default_cost()), 1.1);
}

TEST(TraceReturn, ShapedNeedsClf) {
  EXPECT_THROW(trace_return(CostKind::kShaped, hand_trace(), 0.5, default_cost()), Error);
}

TEST(TraceReturn, TelescopingOnRandomPendulumTraces) {
  const Environment env = make_pendulum(0.1, 20);
  const RunningCost cost = default_cost();
  const QuadraticForm W = synthesize_clf(env, cost.Q.matrix(), cost.R.matrix()).value;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> th(-3.0, 3.0), om(-1.0, 1.0), uu(-20.0, 20.0);
  for (int t = 0; t < 20; ++t) {
    const RolloutTrace tr = rollout(env, [&](const Vector&) { return Vector{{uu(rng)}}; },
                                    Vector{{th(rng), om(rng)}}, 60);
    for (double g : {0.0, 0.5, 0.9, 0.99}) {
      const double direct = trace_return(CostKind::kShaped, tr, g, cost, &W);
      EXPECT_NEAR(direct, telescoped_shaped_return(tr, g, cost, W),
                  1e-9 * std::max(1.0, std::abs(direct)));
    }
  }
}

TEST(TraceReturn, UndiscountedShapedIsStandardPlusBoundaryTerms) {
  const Environment env = make_double_integrator(0.1);
  const RunningCost cost = default_cost();
  const DareSolution lqr = synthesize_clf(env, cost.Q.matrix(), cost.R.matrix());
  const Matrix K = lqr.gain;
  const RolloutTrace tr =
      rollout(env, [&](const Vector& x) -> Vector { return -K * x; }, Vector{{1.5, -1}}, 300);
  const double shaped = trace_return(CostKind::kShaped, tr, 1.0, cost, &lqr.value);
  const double standard = trace_return(CostKind::kStandard, tr, 1.0, cost);
  EXPECT_NEAR(shaped, standard + lqr.value(tr.states.back()) - lqr.value(tr.states.front()),
              1e-9);
  // Under the unconstrained LQR input the standard return equals W(x0) in
  // the limit, so the shaped return tends to 0.
  EXPECT_NEAR(standard, lqr.value(tr.states.front()), 1e-6);
  EXPECT_NEAR(shaped, 0.0, 1e-6);
}
