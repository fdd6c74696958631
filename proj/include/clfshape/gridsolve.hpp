#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <vector>

#include "clfshape/core.hpp"
#include "clfshape/costs.hpp"
#include "clfshape/dynamics.hpp"
#include "clfshape/grid.hpp"
#include "clfshape/quadratics.hpp"

namespace clfshape {

struct SolverOptions {
  double escape_penalty = 1e3;  // added whenever F(x,u) leaves the box
  bool refine_inputs = true;    // parabolic refinement between input samples
  int threads = 1;
};

/// Which terms enter a Bellman right-hand side
///   rhs(x,u) = l(x,u) + pen(F) + [W(F)] + gamma * next_I(F)   (+ [-W(x)])
struct BackupTerms {
  double gamma = 0.0;
  bool add_w_next = false;       // exact W at the successor
  bool subtract_w_here = false;  // -W(x); constant in u
  const std::vector<double>* next = nullptr;  // interpolated successor field
  /// Shaped fields jump with W across a wrapped face; interpolate them as
  /// if V~ + W were continuous there (see BellmanModel::seam_shift).
  bool unwrap_shaped = false;
  /// Per-node refined scalar input used in place of a fresh parabolic step
  /// (NaN: none). Makes the backup a min over a fixed set, hence a contraction.
  const std::vector<double>* frozen_refinement = nullptr;
};

inline BackupTerms bellman_terms(CostKind kind, double gamma, const std::vector<double>* next) {
  const bool shaped = kind == CostKind::kShaped;
  return {gamma, shaped, shaped, next, shaped};
}

/// Offset within [-spacing/2, spacing/2] of the vertex of the parabola through
/// three equally spaced samples, or 0 if the samples are not convex.
inline double parabolic_offset(double f_minus, double f_centre, double f_plus, double spacing) {
  const double curvature = f_minus - 2.0 * f_centre + f_plus;
  if (!(curvature > 0.0)) return 0.0;
  const double offset = 0.5 * spacing * (f_minus - f_plus) / curvature;
  return std::clamp(offset, -0.5 * spacing, 0.5 * spacing);
}

/// Discretized control problem: environment, grid, input samples, running
/// cost and optional candidate CLF W. Successor stencils and stage costs for
/// every (node, input sample) pair are tabulated once at construction.
class BellmanModel {
 public:
  BellmanModel(const Environment& env, GridSpec grid, InputSet inputs, RunningCost cost,
               std::optional<QuadraticForm> W = std::nullopt, SolverOptions options = {})
      : env_(&env),
        grid_(std::move(grid)),
        inputs_(std::move(inputs)),
        cost_(std::move(cost)),
        W_(std::move(W)),
        options_(options) {
    if (grid_.dim() != env.state_dim()) throw Error("grid and environment dimensions differ");
    const std::size_t n = grid_.size();
    const std::size_t a = inputs_.size();
    corners_ = static_cast<int>(grid_.corners());
    nodes_.resize(n);
    w_here_.assign(n, 0.0);
    seam_shift_.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      nodes_[i] = grid_.node(i);
      if (!W_) continue;
      w_here_[i] = (*W_)(nodes_[i]);
      Vector raw(grid_.dim());
      for (int d = 0; d < grid_.dim(); ++d)
        raw[d] = grid_.coords(d)[grid_.coordinate_index(i, d)];
      seam_shift_[i] = w_here_[i] - (*W_)(raw);
    }
    idx_.resize(n * a * corners_);
    wts_.resize(n * a * corners_);
    base_.resize(n * a);
    if (W_) {
      w_next_.resize(n * a);
      seam_next_.resize(n * a);
    }
    parallel_for(n, options_.threads, [&](std::size_t begin, std::size_t end) {
      Stencil s;
      for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < a; ++j) {
          const std::size_t k = i * a + j;
          const Vector next = env_->step(nodes_[i], inputs_[j]);
          compute_stencil(grid_, next, s);
          std::copy_n(s.index.begin(), corners_, idx_.begin() + k * corners_);
          std::copy_n(s.weight.begin(), corners_, wts_.begin() + k * corners_);
          base_[k] = cost_(nodes_[i], inputs_[j]) + (s.clamped ? options_.escape_penalty : 0.0);
          if (W_) {
            w_next_[k] = (*W_)(next);
            seam_next_[k] = apply_stencil(s, seam_shift_);
          }
        }
      }
    });
    if (inputs_.scalar() && inputs_.size() >= 3)
      input_spacing_ = inputs_[1][0] - inputs_[0][0];
  }

  const Environment& env() const { return *env_; }
  const GridSpec& grid() const { return grid_; }
  const InputSet& inputs() const { return inputs_; }
  const RunningCost& cost() const { return cost_; }
  const std::optional<QuadraticForm>& clf() const { return W_; }
  const SolverOptions& options() const { return options_; }
  const Vector& node(std::size_t i) const { return nodes_[i]; }
  std::size_t num_nodes() const { return grid_.size(); }
  double w_at_node(std::size_t i) const { return w_here_[i]; }
  /// W(node) - W(raw node coordinates); nonzero only on the +pi face of a
  /// wrapped dimension.
  const std::vector<double>& seam_shift() const { return seam_shift_; }

  void check_terms(const BackupTerms& terms) const {
    if ((terms.add_w_next || terms.subtract_w_here) && !W_)
      throw Error("shaped backup requested on a model without a candidate CLF");
  }

  /// rhs for tabulated input sample j at node i (without the -W(x) offset).
  double tabulated_rhs(std::size_t i, std::size_t j, const BackupTerms& terms) const {
    const std::size_t k = i * inputs_.size() + j;
    double v = base_[k];
    if (terms.add_w_next) v += w_next_[k];
    if (terms.next) {
      const std::uint32_t* id = &idx_[k * corners_];
      const double* w = &wts_[k * corners_];
      double acc = 0.0;
      for (int c = 0; c < corners_; ++c) acc += w[c] * (*terms.next)[id[c]];
      if (terms.unwrap_shaped) acc += seam_next_[k];
      v += terms.gamma * acc;
    }
    return v;
  }

  /// rhs at an arbitrary state and input (without the -W(x) offset).
  double rhs(const Vector& x, const Vector& u, const BackupTerms& terms) const {
    const Vector next = env_->step(x, u);
    Stencil s;
    compute_stencil(grid_, next, s);
    double v = cost_(x, u) + (s.clamped ? options_.escape_penalty : 0.0);
    if (terms.add_w_next) v += (*W_)(next);
    if (terms.next) v += terms.gamma * successor_value(s, *terms.next, terms.unwrap_shaped);
    return v;
  }

  /// Interpolated field value for a successor stencil. With `unwrap`, nodes
  /// on the far side of a wrapped face are shifted by W(wrapped) - W(raw):
  /// W = x'Px on a wrapped angle is discontinuous there while V~ + W is not.
  double successor_value(const Stencil& s, const std::vector<double>& values,
                         bool unwrap) const {
    double v = apply_stencil(s, values);
    if (unwrap && W_) v += apply_stencil(s, seam_shift_);
    return v;
  }

  /// Shaped-field interpolation at an arbitrary state.
  double interpolate_shaped(const std::vector<double>& values, const Vector& x) const {
    Stencil s;
    compute_stencil(grid_, x, s);
    return successor_value(s, values, true);
  }

  double offset_at(const Vector& x, const BackupTerms& terms) const {
    return terms.subtract_w_here ? -(*W_)(x) : 0.0;
  }

  struct Choice {
    double value = 0.0;  // minimal rhs, including the -W(x) offset
    int index = 0;
    Vector input;
  };

  /// Minimizes over the input samples (ties: smallest norm, then lowest
  /// index), then tries the parabolic vertex between the neighbouring samples
  /// of a scalar input. `scratch` must hold inputs().size() entries.
  template <typename RhsFn>
  Choice minimize(RhsFn&& sample_rhs, const Vector& x, const BackupTerms& terms,
                  std::vector<double>& scratch, const double* frozen = nullptr) const {
    double best = std::numeric_limits<double>::infinity();
    int best_j = inputs_.zero_index();
    for (int j : inputs_.tie_break_order()) {
      const double v = sample_rhs(j);
      scratch[j] = v;
      if (v < best) {
        best = v;
        best_j = j;
      }
    }
    Choice choice{best, best_j, inputs_[best_j]};
    if (frozen) {
      if (!std::isnan(*frozen)) {
        Vector u{{*frozen}};
        const double v = rhs(x, u, terms);
        if (v < best) {
          choice.value = v;
          choice.input = std::move(u);
        }
      }
    } else if (options_.refine_inputs && input_spacing_ > 0.0 && best_j > 0 &&
        best_j + 1 < static_cast<int>(inputs_.size())) {
      const double offset =
          parabolic_offset(scratch[best_j - 1], best, scratch[best_j + 1], input_spacing_);
      if (offset != 0.0) {
        Vector u = inputs_[best_j];
        u[0] += offset;
        const double v = rhs(x, u, terms);
        if (v < best) {
          choice.value = v;
          choice.input = std::move(u);
        }
      }
    }
    choice.value += offset_at(x, terms);
    return choice;
  }

  Choice backup_node(std::size_t i, const BackupTerms& terms, std::vector<double>& scratch) const {
    const double* frozen = terms.frozen_refinement ? &(*terms.frozen_refinement)[i] : nullptr;
    return minimize([&](int j) { return tabulated_rhs(i, j, terms); }, nodes_[i], terms, scratch,
                    frozen);
  }

  Choice backup_state(const Vector& x, const BackupTerms& terms,
                      std::vector<double>& scratch) const {
    return minimize([&](int j) { return rhs(x, inputs_[j], terms); }, x, terms, scratch);
  }

  /// One synchronous (Jacobi) sweep: out = T[terms.next].
  void sweep(const BackupTerms& terms, std::vector<double>& out,
             TabularPolicy* policy = nullptr) const {
    check_terms(terms);
    const std::size_t n = num_nodes();
    out.resize(n);
    if (policy) {
      policy->index.resize(n);
      policy->input.resize(n);
    }
    parallel_for(n, options_.threads, [&](std::size_t begin, std::size_t end) {
      std::vector<double> scratch(inputs_.size());
      for (std::size_t i = begin; i < end; ++i) {
        Choice c = backup_node(i, terms, scratch);
        out[i] = c.value;
        if (policy) {
          policy->index[i] = c.index;
          policy->input[i] = std::move(c.input);
        }
      }
    });
  }

 private:
  const Environment* env_;
  GridSpec grid_;
  InputSet inputs_;
  RunningCost cost_;
  std::optional<QuadraticForm> W_;
  SolverOptions options_;
  int corners_ = 1;
  double input_spacing_ = 0.0;
  std::vector<Vector> nodes_;
  std::vector<double> w_here_;
  std::vector<double> seam_shift_;
  std::vector<std::uint32_t> idx_;
  std::vector<double> wts_;
  std::vector<double> base_;
  std::vector<double> w_next_;
  std::vector<double> seam_next_;
};

inline double sup_norm_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

struct SolveResult {
  ValueField field;
  TabularPolicy policy;
  std::vector<double> sweep_deltas;  // sup-norm change of each sweep
  int frozen_at = -1;                // sweep at which refinement was frozen, or -1
};

/// Sweeps without a new smallest sup-norm change before refinement is frozen.
inline constexpr int kRefinementStallSweeps = 20;

/// Infinite-horizon value iteration from V = 0 with Jacobi sweeps until the
/// sup-norm change drops below tol. The returned policy is greedy for the
/// returned field, and bellman_residual = |T[V] - V|_inf for the operator
/// actually iterated (frozen refinement included, see frozen_at).
inline SolveResult value_iteration(const BellmanModel& model, CostKind kind, double gamma,
                                   double tol, int max_sweeps) {
  if (!(gamma >= 0.0 && gamma < 1.0))
    throw Error("infinite-horizon value iteration needs gamma in [0, 1)");
  if (!(tol > 0.0)) throw Error("value iteration tolerance must be positive");
  SolveResult result;
  std::vector<double> V(model.num_nodes(), 0.0);
  std::vector<double> next;
  double delta = std::numeric_limits<double>::infinity();
  double best_delta = delta;
  int stalled = 0;
  int sweeps = 0;
  // The refined input depends on V, so the refined backup need not contract
  // and can cycle (seen at the hanging pendulum). On a stall, each node keeps
  // its current refined input as a fixed extra candidate.
  std::vector<double> frozen;
  auto terms = [&] {
    BackupTerms t = bellman_terms(kind, gamma, &V);
    if (!frozen.empty()) t.frozen_refinement = &frozen;
    return t;
  };
  while (sweeps < max_sweeps) {
    model.sweep(terms(), next);
    ++sweeps;
    delta = sup_norm_diff(next, V);
    result.sweep_deltas.push_back(delta);
    V.swap(next);
    if (!std::isfinite(delta)) break;
    if (delta < tol) break;
    if (delta < best_delta) {
      best_delta = delta;
      stalled = 0;
    } else if (++stalled >= kRefinementStallSweeps && frozen.empty() &&
               model.options().refine_inputs && model.inputs().scalar()) {
      TabularPolicy current;
      model.sweep(terms(), next, &current);
      frozen.assign(V.size(), std::numeric_limits<double>::quiet_NaN());
      for (std::size_t i = 0; i < V.size(); ++i)
        if (current.input[i] != model.inputs()[current.index[i]])
          frozen[i] = current.input[i][0];
      result.frozen_at = sweeps;
    }
  }
  if (!(delta < tol))
    throw NotConvergedError("value iteration did not converge in " +
                                std::to_string(max_sweeps) + " sweeps",
                            delta);
  model.sweep(terms(), next, &result.policy);
  result.field.values = std::move(V);
  result.field.cost_kind = kind;
  result.field.gamma = gamma;
  result.field.sweeps = sweeps;
  result.field.bellman_residual = sup_norm_diff(next, result.field.values);
  return result;
}

/// |T[V] - V|_inf recomputed with one extra sweep.
inline double bellman_residual(const BellmanModel& model, const ValueField& field) {
  std::vector<double> next;
  model.sweep(bellman_terms(field.cost_kind, field.gamma, &field.values), next);
  return sup_norm_diff(next, field.values);
}

/// Backward induction J_{j+1} = T_1[J_j] from J_0 = W (or 0 without a
/// terminal cost). The first backup uses the exact terminal W at the
/// successor; later ones interpolate. The policy is greedy for J_N: with
/// N = 0 and a CLF terminal it is argmin_u l(x,u) + W(F(x,u)).
inline SolveResult finite_horizon_value(const BellmanModel& model, int horizon,
                                        bool clf_terminal) {
  if (horizon < 0) throw Error("negative prediction horizon");
  if (clf_terminal && !model.clf()) throw Error("CLF terminal cost requested without a CLF");
  SolveResult result;
  std::vector<double> J(model.num_nodes(), 0.0);
  if (clf_terminal)
    for (std::size_t i = 0; i < model.num_nodes(); ++i) J[i] = model.w_at_node(i);
  std::vector<double> next;
  // Successor term for the current stage: exact W while J is still the terminal.
  auto terms_for = [&](int stage) {
    BackupTerms t;
    t.gamma = 1.0;
    if (stage == 0) {
      t.add_w_next = clf_terminal;
    } else {
      t.next = &J;
    }
    return t;
  };
  for (int stage = 0; stage < horizon; ++stage) {
    model.sweep(terms_for(stage), next);
    result.sweep_deltas.push_back(sup_norm_diff(next, J));
    J.swap(next);
  }
  model.sweep(terms_for(horizon), next, &result.policy);
  result.field.values = std::move(J);
  result.field.cost_kind = CostKind::kStandard;
  result.field.gamma = 1.0;
  result.field.sweeps = horizon;
  return result;
}

/// Fixed point of V(x) = c(x, pi(x)) + gamma V_I(F(x, pi(x))), iterated to
/// sup-norm tol. gamma = 1 requires the origin to be a fixed point of the
/// closed loop.
inline ValueField policy_evaluation(const BellmanModel& model, CostKind kind, double gamma,
                                    const TabularPolicy& policy, double tol,
                                    int max_sweeps = 1000000) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("policy evaluation needs gamma in [0, 1]");
  const std::size_t n = model.num_nodes();
  if (policy.size() != n) throw MetadataMismatchError("policy does not match the grid");
  const BackupTerms probe = bellman_terms(kind, gamma, nullptr);
  model.check_terms(probe);
  if (gamma == 1.0) {
    const std::size_t o = model.grid().origin_index();
    const Vector next = model.env().step(model.node(o), policy.input[o]);
    if (next.norm() != 0.0)
      throw PolicyUnstableError("undiscounted evaluation needs the origin to be a fixed point");
  }
  std::vector<double> cost(n), shift(n, 0.0);
  std::vector<Stencil> stencils(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& x = model.node(i);
    const Vector& u = policy.input[i];
    const Vector next = model.env().step(x, u);
    compute_stencil(model.grid(), next, stencils[i]);
    double c = model.cost()(x, u) + (stencils[i].clamped ? model.options().escape_penalty : 0.0);
    if (probe.add_w_next) c += (*model.clf())(next);
    cost[i] = c + model.offset_at(x, probe);
    if (probe.unwrap_shaped)
      shift[i] = apply_stencil(stencils[i], model.seam_shift());
  }
  std::vector<double> V(n, 0.0), next(n);
  ValueField field;
  field.cost_kind = kind;
  field.gamma = gamma;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    parallel_for(n, model.options().threads, [&](std::size_t begin, std::size_t end) {
      for (std::size_t i = begin; i < end; ++i)
        next[i] = cost[i] + gamma * (apply_stencil(stencils[i], V) + shift[i]);
    });
    const double delta = sup_norm_diff(next, V);
    V.swap(next);
    double biggest = 0.0;
    for (double v : V) biggest = std::max(biggest, std::abs(v));
    if (!(biggest <= 1e12)) throw PolicyUnstableError("policy evaluation diverged");
    if (delta < tol) {
      field.values = std::move(V);
      field.sweeps = sweep;
      field.bellman_residual = delta;
      return field;
    }
  }
  throw PolicyUnstableError("policy evaluation did not settle within the sweep budget");
}

/// Per-node V_pi - V_star (same convention for both cost kinds, >= 0 up to
/// solver tolerance).
struct GapField {
  std::vector<double> values;
  CostKind cost_kind = CostKind::kStandard;
  double gamma = 0.0;
};

inline GapField optimality_gap(const ValueField& v_pi, const ValueField& v_star) {
  if (v_pi.cost_kind != v_star.cost_kind || v_pi.gamma != v_star.gamma ||
      v_pi.size() != v_star.size())
    throw MetadataMismatchError("optimality gap of fields with different metadata");
  GapField gap{std::vector<double>(v_pi.size()), v_pi.cost_kind, v_pi.gamma};
  for (std::size_t i = 0; i < v_pi.size(); ++i) gap.values[i] = v_pi[i] - v_star[i];
  return gap;
}

/// At every node, the rank_k-th best input sample by the Bellman rhs of
/// v_star (rank 1 returns optimal_policy unchanged).
inline TabularPolicy make_suboptimal(const BellmanModel& model, const ValueField& v_star,
                                     const TabularPolicy& optimal_policy, int rank_k) {
  if (rank_k < 1) throw Error("suboptimality rank must be >= 1");
  if (rank_k > static_cast<int>(model.inputs().size()))
    throw Error("suboptimality rank exceeds the input set size");
  if (rank_k == 1) return optimal_policy;
  const BackupTerms terms = bellman_terms(v_star.cost_kind, v_star.gamma, &v_star.values);
  model.check_terms(terms);
  const std::size_t n = model.num_nodes();
  TabularPolicy policy;
  policy.index.resize(n);
  policy.input.resize(n);
  const auto& order = model.inputs().tie_break_order();
  parallel_for(n, model.options().threads, [&](std::size_t begin, std::size_t end) {
    std::vector<std::pair<double, int>> ranked(order.size());
    for (std::size_t i = begin; i < end; ++i) {
      for (std::size_t r = 0; r < order.size(); ++r)
        ranked[r] = {model.tabulated_rhs(i, order[r], terms), static_cast<int>(r)};
      std::nth_element(ranked.begin(), ranked.begin() + (rank_k - 1), ranked.end());
      const int j = order[ranked[rank_k - 1].second];
      policy.index[i] = j;
      policy.input[i] = model.inputs()[j];
    }
  });
  return policy;
}

/// Continuous-state feedback from a value field: at x, the rank-th best input
/// sample for rhs(x, u) (rank 1 adds the same refinement as the solver), so
/// at grid nodes it reproduces the tabulated policy.
class LookaheadController {
 public:
  LookaheadController(const BellmanModel& model, BackupTerms terms, int rank = 1)
      : model_(&model), terms_(terms), rank_(rank) {
    model.check_terms(terms);
    if (rank < 1 || rank > static_cast<int>(model.inputs().size()))
      throw Error("controller rank out of range");
  }

  Vector operator()(const Vector& x) const {
    std::vector<double> scratch(model_->inputs().size());
    if (rank_ == 1) return model_->backup_state(x, terms_, scratch).input;
    const auto& order = model_->inputs().tie_break_order();
    std::vector<std::pair<double, int>> ranked(order.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      ranked[r] = {model_->rhs(x, model_->inputs()[order[r]], terms_), static_cast<int>(r)};
    std::nth_element(ranked.begin(), ranked.begin() + (rank_ - 1), ranked.end());
    return model_->inputs()[order[ranked[rank_ - 1].second]];
  }

 private:
  const BellmanModel* model_;
  BackupTerms terms_;
  int rank_;
};

}  // namespace clfshape
