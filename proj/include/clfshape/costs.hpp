#pragma once

#include <cmath>
#include <vector>

#include "clfshape/core.hpp"
#include "clfshape/dynamics.hpp"
#include "clfshape/quadratics.hpp"

namespace clfshape {

// Rewards in the usual RL convention are the negatives of these costs; the
// library works with costs throughout.

/// l(x, u) = Q(x) + R(u).
struct RunningCost {
  QuadraticForm Q;
  QuadraticForm R;

  double operator()(const Vector& x, const Vector& u) const { return Q(x) + R(u); }
};

inline double eval_running(const RunningCost& cost, const Vector& x, const Vector& u) {
  return cost(x, u);
}

/// W(F(x,u)) - W(x) + l(x,u). Can be negative.
struct ShapedCost {
  RunningCost base;
  QuadraticForm W;
  const Environment* env = nullptr;

  double operator()(const Vector& x, const Vector& u) const {
    const Vector next = env->step(x, u);
    return W(next) - W(x) + base(x, u);
  }
};

inline double eval_shaped(const ShapedCost& shaped, const Vector& x, const Vector& u) {
  return shaped(x, u);
}

/// Cost of step k of a trace under either cost kind.
inline double step_cost(CostKind kind, const RunningCost& cost, const QuadraticForm* W,
                        const RolloutTrace& trace, int k) {
  const double l = cost(trace.states[k], trace.inputs[k]);
  if (kind == CostKind::kStandard) return l;
  return (*W)(trace.states[k + 1]) - (*W)(trace.states[k]) + l;
}

/// Truncated discounted return: sum_{k < T} gamma^k c(x_k, u_k).
inline double trace_return(CostKind kind, const RolloutTrace& trace, double gamma,
                           const RunningCost& cost, const QuadraticForm* W = nullptr) {
  if (kind == CostKind::kShaped && W == nullptr)
    throw Error("shaped trace return needs a candidate CLF");
  double total = 0.0;
  double discount = 1.0;
  for (int k = 0; k < trace.horizon_steps; ++k) {
    total += discount * step_cost(kind, cost, W, trace, k);
    discount *= gamma;
  }
  return total;
}

/// The shaped return rearranged by summation by parts:
///   -W(x0) + (1 - gamma) sum_{k<T} gamma^k W(x_{k+1}) + standard + gamma^T W(x_T).
/// Equal to trace_return(kShaped, ...) up to rounding.
inline double telescoped_shaped_return(const RolloutTrace& trace, double gamma,
                                       const RunningCost& cost, const QuadraticForm& W) {
  const int T = trace.horizon_steps;
  double w_sum = 0.0;
  double discount = 1.0;
  for (int k = 0; k < T; ++k) {
    w_sum += discount * W(trace.states[k + 1]);
    discount *= gamma;
  }
  const double tail = discount * W(trace.states[T]);
  return -W(trace.states[0]) + (1.0 - gamma) * w_sum +
         trace_return(CostKind::kStandard, trace, gamma, cost) + tail;
}

}  // namespace clfshape
