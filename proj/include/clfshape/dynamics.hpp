#pragma once

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "clfshape/core.hpp"

namespace clfshape {

/// Jacobians of the one-step map at the origin.
struct Linearization {
  Matrix A;
  Matrix B;
};

/// Discrete-time system x+ = F(x, u) on a box of states and a symmetric box
/// of inputs |u_i| <= H_i. Immutable after construction.
class Environment {
 public:
  using StepFn = std::function<Vector(const Vector&, const Vector&)>;

  Environment(std::string name, double dt, Vector state_lo, Vector state_hi,
              Vector input_bound, std::vector<int> wrap_dims, StepFn raw_step,
              std::optional<Linearization> exact_linearization = std::nullopt)
      : name_(std::move(name)),
        dt_(dt),
        state_lo_(std::move(state_lo)),
        state_hi_(std::move(state_hi)),
        input_bound_(std::move(input_bound)),
        wrap_(state_lo_.size(), false),
        raw_step_(std::move(raw_step)),
        exact_(std::move(exact_linearization)) {
    if (!(dt_ > 0.0)) throw Error("environment dt must be positive");
    if (state_lo_.size() != state_hi_.size())
      throw Error("state box bounds differ in dimension");
    for (int d : wrap_dims) {
      if (d < 0 || d >= state_dim()) throw Error("wrap dimension out of range");
      wrap_[d] = true;
    }
    for (int i = 0; i < input_dim(); ++i)
      if (!(input_bound_[i] > 0.0)) throw Error("input bound must be positive");
  }

  const std::string& name() const { return name_; }
  int state_dim() const { return static_cast<int>(state_lo_.size()); }
  int input_dim() const { return static_cast<int>(input_bound_.size()); }
  double dt() const { return dt_; }
  const Vector& state_lo() const { return state_lo_; }
  const Vector& state_hi() const { return state_hi_; }
  const Vector& input_bound() const { return input_bound_; }
  bool is_wrapped(int dim) const { return wrap_[dim]; }
  const std::vector<bool>& wrap_flags() const { return wrap_; }
  const std::optional<Linearization>& exact_linearization() const { return exact_; }

  bool input_admissible(const Vector& u) const {
    if (u.size() != input_dim()) return false;
    for (int i = 0; i < input_dim(); ++i)
      if (!(std::abs(u[i]) <= input_bound_[i])) return false;
    return true;
  }

  /// Non-wrapped coordinates within [lo, hi].
  bool in_state_box(const Vector& x) const {
    for (int i = 0; i < state_dim(); ++i) {
      if (wrap_[i]) continue;
      if (x[i] < state_lo_[i] || x[i] > state_hi_[i]) return false;
    }
    return true;
  }

  Vector wrap(Vector x) const {
    for (int i = 0; i < state_dim(); ++i)
      if (wrap_[i]) x[i] = wrap_angle(x[i]);
    return x;
  }

  /// One step of the dynamics. Throws InputBoundsError for u outside the box.
  Vector step(const Vector& x, const Vector& u) const {
    if (!input_admissible(u))
      throw InputBoundsError(name_ + ": input outside the admissible box");
    return step_unchecked(x, u);
  }

  /// Same as step() without the input check; used for finite differences.
  Vector step_unchecked(const Vector& x, const Vector& u) const {
    return wrap(raw_step_(x, u));
  }

 private:
  std::string name_;
  double dt_;
  Vector state_lo_;
  Vector state_hi_;
  Vector input_bound_;
  std::vector<bool> wrap_;
  StepFn raw_step_;
  std::optional<Linearization> exact_;
};

// ---------------------------------------------------------------------------
// Environments

/// p+ = p + dt v, v+ = v + dt u. Exactly linear.
inline Environment make_double_integrator(double dt, double input_bound = 20.0,
                                          double position_bound = 2.0,
                                          double velocity_bound = 2.0) {
  Linearization lin{Matrix(2, 2), Matrix(2, 1)};
  lin.A << 1.0, dt, 0.0, 1.0;
  lin.B << 0.0, dt;
  auto step = [dt](const Vector& x, const Vector& u) {
    Vector next(2);
    next[0] = x[0] + dt * x[1];
    next[1] = x[1] + dt * u[0];
    return next;
  };
  return Environment("double_integrator", dt, Vector{{-position_bound, -velocity_bound}},
                     Vector{{position_bound, velocity_bound}}, Vector{{input_bound}}, {},
                     step, lin);
}

struct PendulumParams {
  double mass = 1.0;     // kg
  double length = 1.0;   // m
  double gravity = 9.81; // m/s^2
  double damping = 0.1;  // N m s
  double max_speed = 8.0;
  bool operator==(const PendulumParams&) const = default;
};

/// Torque-driven pendulum, theta = 0 upright (unstable), explicit Euler.
///   theta+    = theta + dt * omega
///   omega+    = omega + dt * (g/l sin(theta) - b/(m l^2) omega + u/(m l^2))
inline Environment make_pendulum(double dt, double input_bound,
                                 const PendulumParams& p = {}) {
  if (!(p.mass > 0 && p.length > 0 && p.gravity > 0 && p.damping >= 0))
    throw Error("pendulum parameters must be positive (damping non-negative)");
  const double inertia = p.mass * p.length * p.length;
  auto step = [dt, p, inertia](const Vector& x, const Vector& u) {
    Vector next(2);
    next[0] = x[0] + dt * x[1];
    next[1] = x[1] + dt * (p.gravity / p.length * std::sin(x[0]) -
                           p.damping / inertia * x[1] + u[0] / inertia);
    return next;
  };
  constexpr double kPi = std::numbers::pi;
  return Environment("pendulum", dt, Vector{{-kPi, -p.max_speed}},
                     Vector{{kPi, p.max_speed}}, Vector{{input_bound}}, {0}, step);
}

struct CartpoleParams {
  double cart_mass = 0.57;   // kg
  double pole_mass = 0.127;  // kg, point mass at the pole tip
  double pole_length = 0.6;  // m
  double gravity = 9.81;
  double track_half_length = 0.8;
  double max_cart_speed = 3.0;
  double max_pole_speed = 10.0;
  bool operator==(const CartpoleParams&) const = default;
};

/// Cart-pole with state (p, alpha, p_dot, alpha_dot), alpha = 0 upright,
/// horizontal force input, explicit Euler.
inline Environment make_cartpole(double dt, double input_bound,
                                 const CartpoleParams& c = {}) {
  if (!(c.cart_mass > 0 && c.pole_mass > 0 && c.pole_length > 0 && c.gravity > 0))
    throw Error("cartpole parameters must be positive");
  auto step = [dt, c](const Vector& x, const Vector& u) {
    const double s = std::sin(x[1]);
    const double co = std::cos(x[1]);
    const double m = c.pole_mass;
    const double l = c.pole_length;
    const double p_acc = (u[0] + m * s * (l * x[3] * x[3] - c.gravity * co)) /
                         (c.cart_mass + m * s * s);
    const double a_acc = (c.gravity * s - p_acc * co) / l;
    Vector next(4);
    next[0] = x[0] + dt * x[2];
    next[1] = x[1] + dt * x[3];
    next[2] = x[2] + dt * p_acc;
    next[3] = x[3] + dt * a_acc;
    return next;
  };
  constexpr double kPi = std::numbers::pi;
  return Environment(
      "cartpole", dt,
      Vector{{-c.track_half_length, -kPi, -c.max_cart_speed, -c.max_pole_speed}},
      Vector{{c.track_half_length, kPi, c.max_cart_speed, c.max_pole_speed}},
      Vector{{input_bound}}, {1}, step);
}

/// Exact matrices for linear environments, otherwise central differences
/// around the origin.
inline Linearization linearize(const Environment& env, double h = 1e-5) {
  if (env.exact_linearization()) return *env.exact_linearization();
  const int n = env.state_dim();
  const int m = env.input_dim();
  Linearization lin{Matrix(n, n), Matrix(n, m)};
  const Vector x0 = Vector::Zero(n);
  const Vector u0 = Vector::Zero(m);
  for (int j = 0; j < n; ++j) {
    Vector dx = Vector::Zero(n);
    dx[j] = h;
    lin.A.col(j) = (env.step_unchecked(x0 + dx, u0) - env.step_unchecked(x0 - dx, u0)) /
                   (2.0 * h);
  }
  for (int j = 0; j < m; ++j) {
    Vector du = Vector::Zero(m);
    du[j] = h;
    lin.B.col(j) = (env.step_unchecked(x0, u0 + du) - env.step_unchecked(x0, u0 - du)) /
                   (2.0 * h);
  }
  return lin;
}

// ---------------------------------------------------------------------------
// Rollouts

struct RolloutTrace {
  std::vector<Vector> states;  // horizon_steps + 1 entries
  std::vector<Vector> inputs;
  std::vector<double> running_costs;  // empty when no cost was attached
  int horizon_steps = 0;
  bool escaped = false;  // some state left the (non-wrapped) state box
};

/// Closed-loop simulation x_{k+1} = F(x_k, policy(x_k)).
template <typename Policy>
RolloutTrace rollout(const Environment& env, Policy&& policy, const Vector& x0,
                     int horizon_steps,
                     const std::function<double(const Vector&, const Vector&)>& cost = {}) {
  if (horizon_steps < 0) throw Error("negative rollout horizon");
  RolloutTrace trace;
  trace.horizon_steps = horizon_steps;
  trace.states.reserve(horizon_steps + 1);
  trace.inputs.reserve(horizon_steps);
  trace.states.push_back(x0);
  trace.escaped = !env.in_state_box(x0);
  for (int k = 0; k < horizon_steps; ++k) {
    const Vector& x = trace.states.back();
    Vector u = policy(x);
    if (cost) trace.running_costs.push_back(cost(x, u));
    Vector next = env.step(x, u);
    if (!env.in_state_box(next)) trace.escaped = true;
    trace.inputs.push_back(std::move(u));
    trace.states.push_back(std::move(next));
  }
  return trace;
}

}  // namespace clfshape
