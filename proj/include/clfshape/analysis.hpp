#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <vector>

#include "clfshape/clf.hpp"
#include "clfshape/costs.hpp"
#include "clfshape/gridsolve.hpp"

namespace clfshape {

/// Fraction of each non-wrapped half-width used for certificate suprema.
/// Near the box faces every input leaves the grid, so values there carry the
/// truncation penalty and say nothing about the control problem.
inline constexpr double kCertificateBoxFraction = 0.5;

inline bool in_certificate_region(const GridSpec& grid, const Vector& x, double exclusion_radius,
                                  double box_fraction) {
  if (x.norm() <= exclusion_radius) return false;
  for (int d = 0; d < grid.dim(); ++d) {
    if (grid.wrap_flags()[d]) continue;
    const double limit = box_fraction * (x[d] < 0.0 ? -grid.lo(d) : grid.hi(d));
    if (std::abs(x[d]) > limit * (1.0 + 1e-12)) return false;
  }
  return true;
}

/// max over region nodes (|x| > exclusion_radius, inner box) of field(x) / Q(x).
/// Estimates C_gamma (standard field) or C~_gamma (shaped, may be negative).
inline double estimate_growth_constant(const std::vector<double>& field, const QuadraticForm& Q,
                                       const GridSpec& grid, double exclusion_radius,
                                       double box_fraction = kCertificateBoxFraction) {
  double worst = -std::numeric_limits<double>::infinity();
  bool any = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vector x = grid.node(i);
    if (!in_certificate_region(grid, x, exclusion_radius, box_fraction)) continue;
    const double q = Q(x);
    if (!(q > 0.0)) throw Error("state cost vanishes off the origin; Q must be positive definite");
    worst = std::max(worst, field[i] / q);
    any = true;
  }
  if (!any) throw Error("no grid nodes in the certificate region");
  return worst;
}

inline double estimate_growth_constant(const ValueField& field, const QuadraticForm& Q,
                                       const GridSpec& grid, double exclusion_radius,
                                       double box_fraction = kCertificateBoxFraction) {
  return estimate_growth_constant(field.values, Q, grid, exclusion_radius, box_fraction);
}

/// delta = max(0, sup gap(x) / Q(x)) over the same region.
inline double estimate_gap_ratio(const GapField& gap, const QuadraticForm& Q,
                                 const GridSpec& grid, double exclusion_radius,
                                 double box_fraction = kCertificateBoxFraction) {
  return std::max(0.0, estimate_growth_constant(gap.values, Q, grid, exclusion_radius,
                                                box_fraction));
}

/// 1/(1-gamma) - (C + delta); +inf at gamma = 1.
inline double condition_margin(double gamma, double growth_constant, double delta) {
  if (gamma >= 1.0) return std::numeric_limits<double>::infinity();
  return 1.0 / (1.0 - gamma) - (growth_constant + delta);
}

// ---------------------------------------------------------------------------
// Empirical stability

struct RolloutProtocol {
  int n_trials = 20;
  double horizon_seconds = 20.0;
  double success_radius = 0.05;
  Vector ic_lo;
  Vector ic_hi;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct EmpiricalRecord {
  int n_trials = 0;
  int n_success = 0;
  double success_set_radius = 0.0;
  double horizon_seconds = 0.0;
  std::vector<Vector> failed_initial_conditions;

  double success_fraction() const {
    return n_trials == 0 ? 0.0 : static_cast<double>(n_success) / n_trials;
  }
};

/// Enters the ball |x| < radius and never leaves it again.
inline bool trace_settles(const RolloutTrace& trace, double radius) {
  std::size_t k = 0;
  while (k < trace.states.size() && !(trace.states[k].norm() < radius)) ++k;
  if (k == trace.states.size()) return false;
  for (; k < trace.states.size(); ++k)
    if (!(trace.states[k].norm() < radius)) return false;
  return true;
}

/// Initial conditions drawn uniformly from the box, in a fixed order.
inline std::vector<Vector> sample_initial_conditions(const Vector& lo, const Vector& hi, int n,
                                                     std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<Vector> out;
  out.reserve(n);
  for (int t = 0; t < n; ++t) {
    Vector x(lo.size());
    for (int d = 0; d < lo.size(); ++d) {
      std::uniform_real_distribution<double> dist(lo[d], hi[d]);
      x[d] = dist(rng);
    }
    out.push_back(std::move(x));
  }
  return out;
}

using Controller = std::function<Vector(const Vector&)>;

inline EmpiricalRecord certify_stability(const Environment& env, const Controller& controller,
                                         const std::vector<Vector>& initial_conditions,
                                         double horizon_seconds, double success_radius,
                                         int threads = 1) {
  const int steps = static_cast<int>(std::lround(horizon_seconds / env.dt()));
  std::vector<char> ok(initial_conditions.size(), 0);
  parallel_for(initial_conditions.size(), threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t t = begin; t < end; ++t)
      ok[t] = trace_settles(rollout(env, controller, initial_conditions[t], steps),
                            success_radius);
  });
  EmpiricalRecord record;
  record.n_trials = static_cast<int>(initial_conditions.size());
  record.success_set_radius = success_radius;
  record.horizon_seconds = horizon_seconds;
  for (std::size_t t = 0; t < ok.size(); ++t) {
    if (ok[t]) {
      ++record.n_success;
    } else {
      record.failed_initial_conditions.push_back(initial_conditions[t]);
    }
  }
  return record;
}

inline EmpiricalRecord certify_stability(const Environment& env, const Controller& controller,
                                         const RolloutProtocol& protocol) {
  if (protocol.n_trials < 1) throw Error("certification needs at least one trial");
  return certify_stability(
      env, controller,
      sample_initial_conditions(protocol.ic_lo, protocol.ic_hi, protocol.n_trials, protocol.seed),
      protocol.horizon_seconds, protocol.success_radius, protocol.threads);
}

// ---------------------------------------------------------------------------
// Certificates

struct StabilityCertificate {
  double growth_constant = 0.0;  // C_gamma or C~_gamma
  double delta = 0.0;
  double condition_margin = 0.0;
  bool predicted_stable = false;
  EmpiricalRecord empirical;
};

/// Grid check of the composite candidate V~ = W + gamma * V~_pi:
///   positivity  V~(x) > (1-gamma) W(x) + gamma Q(x) - slack
///   decrease    V~(F(x, pi(x))) - V~(x) < 0
/// at every node outside the exclusion ball.
struct CompositeCheck {
  bool positivity_holds = true;
  double worst_positivity = std::numeric_limits<double>::infinity();  // min of lhs - rhs
  bool decrease_holds = true;
  double worst_decrease = -std::numeric_limits<double>::infinity();   // max one-step change
  std::size_t nodes_checked = 0;
};

inline CompositeCheck check_composite(const BellmanModel& model, const ValueField& v_pi_shaped,
                                      const TabularPolicy& policy, double exclusion_radius,
                                      double slack) {
  if (v_pi_shaped.cost_kind != CostKind::kShaped)
    throw MetadataMismatchError("composite candidate needs a shaped policy value");
  if (!model.clf()) throw Error("composite candidate needs a CLF");
  const QuadraticForm& W = *model.clf();
  const QuadraticForm& Q = model.cost().Q;
  const double gamma = v_pi_shaped.gamma;
  CompositeCheck check;
  for (std::size_t i = 0; i < model.num_nodes(); ++i) {
    const Vector& x = model.node(i);
    if (!in_certificate_region(model.grid(), x, exclusion_radius, kCertificateBoxFraction))
      continue;
    ++check.nodes_checked;
    const double here = W(x) + gamma * v_pi_shaped[i];
    const double lower = (1.0 - gamma) * W(x) + gamma * Q(x);
    check.worst_positivity = std::min(check.worst_positivity, here - lower);
    const Vector next = model.env().step(x, policy.input[i]);
    const double there = W(next) + gamma * model.interpolate_shaped(v_pi_shaped.values, next);
    check.worst_decrease = std::max(check.worst_decrease, there - here);
  }
  check.positivity_holds = check.worst_positivity > -slack;
  check.decrease_holds = check.worst_decrease < 0.0;
  return check;
}

/// Growth constant, gap ratio and margin for a policy of either cost kind,
/// plus rollouts of `controller`. Sufficient condition for stability (the
/// testable direction): margin > 0.
inline StabilityCertificate certify_policy(const BellmanModel& model, const ValueField& v_star,
                                           const ValueField& v_pi, const Controller& controller,
                                           const RolloutProtocol& protocol,
                                           double exclusion_radius) {
  StabilityCertificate cert;
  const QuadraticForm& Q = model.cost().Q;
  cert.growth_constant = estimate_growth_constant(v_star, Q, model.grid(), exclusion_radius);
  cert.delta = estimate_gap_ratio(optimality_gap(v_pi, v_star), Q, model.grid(), exclusion_radius);
  cert.condition_margin = condition_margin(v_star.gamma, cert.growth_constant, cert.delta);
  cert.predicted_stable = cert.condition_margin > 0.0;
  if (protocol.n_trials > 0) cert.empirical = certify_stability(model.env(), controller, protocol);
  return cert;
}

/// Standard cost: C_gamma + delta < 1/(1-gamma).
inline StabilityCertificate check_proposition1(const BellmanModel& model, const ValueField& v_star,
                                               const ValueField& v_pi,
                                               const Controller& controller,
                                               const RolloutProtocol& protocol,
                                               double exclusion_radius) {
  if (v_star.cost_kind != CostKind::kStandard)
    throw MetadataMismatchError("proposition check needs standard-cost fields");
  return certify_policy(model, v_star, v_pi, controller, protocol, exclusion_radius);
}

struct Theorem1Report {
  StabilityCertificate certificate;
  CompositeCheck composite;
};

/// Shaped cost: C~_gamma + delta~ < 1/(1-gamma), plus the composite
/// candidate's positivity and one-step decrease on the grid.
inline Theorem1Report check_theorem1(const BellmanModel& model, const ValueField& v_star,
                                     const ValueField& v_pi, const TabularPolicy& policy,
                                     const Controller& controller, const RolloutProtocol& protocol,
                                     double exclusion_radius, double slack) {
  if (v_star.cost_kind != CostKind::kShaped)
    throw MetadataMismatchError("theorem check needs shaped-cost fields");
  Theorem1Report report;
  report.certificate = certify_policy(model, v_star, v_pi, controller, protocol, exclusion_radius);
  report.composite = check_composite(model, v_pi, policy, exclusion_radius, slack);
  return report;
}

/// V~*_gamma <= V*_gamma at every node, up to slack * (1 + |V*|).
struct DominationVerdict {
  double gamma = 0.0;
  bool holds_on_grid = false;
  double worst_violation = 0.0;  // max over nodes of V~* - V*
};

inline DominationVerdict check_domination(const ValueField& v_standard,
                                          const ValueField& v_shaped, double slack = 1e-6) {
  if (v_standard.cost_kind != CostKind::kStandard || v_shaped.cost_kind != CostKind::kShaped ||
      v_standard.gamma != v_shaped.gamma || v_standard.size() != v_shaped.size())
    throw MetadataMismatchError("domination needs a standard and a shaped field at one gamma");
  DominationVerdict verdict;
  verdict.gamma = v_standard.gamma;
  verdict.worst_violation = -std::numeric_limits<double>::infinity();
  verdict.holds_on_grid = true;
  for (std::size_t i = 0; i < v_standard.size(); ++i) {
    const double violation = v_shaped[i] - v_standard[i];
    verdict.worst_violation = std::max(verdict.worst_violation, violation);
    if (violation > slack * (1.0 + std::abs(v_standard[i]))) verdict.holds_on_grid = false;
  }
  return verdict;
}

}  // namespace clfshape
