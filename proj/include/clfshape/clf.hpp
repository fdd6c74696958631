#pragma once

#include <limits>
#include <utility>

#include "clfshape/costs.hpp"
#include "clfshape/gridsolve.hpp"

namespace clfshape {

/// min over the input samples of f, refined by one parabolic step between
/// neighbouring samples for scalar inputs. Returns (value, minimizer).
template <typename Fn>
std::pair<double, Vector> min_over_inputs(const InputSet& inputs, Fn&& f, bool refine = true) {
  std::vector<double> values(inputs.size());
  double best = std::numeric_limits<double>::infinity();
  int best_j = inputs.zero_index();
  for (int j : inputs.tie_break_order()) {
    values[j] = f(inputs[j]);
    if (values[j] < best) {
      best = values[j];
      best_j = j;
    }
  }
  Vector arg = inputs[best_j];
  if (refine && inputs.scalar() && best_j > 0 && best_j + 1 < static_cast<int>(inputs.size())) {
    const double spacing = inputs[1][0] - inputs[0][0];
    const double offset =
        parabolic_offset(values[best_j - 1], best, values[best_j + 1], spacing);
    if (offset != 0.0) {
      Vector u = arg;
      u[0] += offset;
      const double v = f(u);
      if (v < best) {
        best = v;
        arg = std::move(u);
      }
    }
  }
  return {best, arg};
}

/// Grid test of the CLF decrease condition min_u W(F(x,u)) - W(x) < 0.
struct ClfVerdict {
  bool is_clf_on_grid = false;
  Vector worst_point;
  double worst_decrease = 0.0;  // largest (least negative) best-case decrease
  double fraction_violating = 0.0;
  std::size_t nodes_checked = 0;
};

inline ClfVerdict verify_clf_on_grid(const QuadraticForm& W, const Environment& env,
                                     const GridSpec& grid, const InputSet& inputs,
                                     double exclusion_radius = 0.05, bool refine = true) {
  ClfVerdict verdict;
  verdict.worst_decrease = -std::numeric_limits<double>::infinity();
  std::size_t violating = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vector x = grid.node(i);
    if (x.norm() <= exclusion_radius) continue;
    const double w_here = W(x);
    const double decrease =
        min_over_inputs(inputs, [&](const Vector& u) { return W(env.step(x, u)) - w_here; },
                        refine)
            .first;
    ++verdict.nodes_checked;
    if (!(decrease < 0.0)) ++violating;
    if (decrease > verdict.worst_decrease) {
      verdict.worst_decrease = decrease;
      verdict.worst_point = x;
    }
  }
  if (verdict.nodes_checked == 0) throw Error("no grid nodes outside the exclusion radius");
  verdict.fraction_violating = static_cast<double>(violating) / verdict.nodes_checked;
  verdict.is_clf_on_grid = violating == 0;
  return verdict;
}

/// Grid test of inf_u W(F(x,u)) - W(x) + l(x,u) <= 0 at every node. `slack`
/// absorbs rounding in the infimum.
struct Lemma1Result {
  bool holds = false;
  double worst_margin = 0.0;
  Vector worst_point;
};

inline Lemma1Result check_lemma1_condition(const QuadraticForm& W, const Environment& env,
                                           const GridSpec& grid, const InputSet& inputs,
                                           const RunningCost& cost, double slack = 1e-6,
                                           bool refine = true) {
  Lemma1Result result;
  result.worst_margin = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vector x = grid.node(i);
    const double w_here = W(x);
    const double margin =
        min_over_inputs(
            inputs,
            [&](const Vector& u) { return W(env.step(x, u)) - w_here + cost(x, u); }, refine)
            .first;
    if (margin > result.worst_margin) {
      result.worst_margin = margin;
      result.worst_point = x;
    }
  }
  result.holds = result.worst_margin <= slack;
  return result;
}

}  // namespace clfshape
