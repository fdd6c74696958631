#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "clfshape/core.hpp"
#include "clfshape/dynamics.hpp"

namespace clfshape {

/// Rectangular tensor grid over the state box. Every dimension has an odd
/// node count and contains 0 exactly, so the origin is always a node.
class GridSpec {
 public:
  GridSpec() = default;

  /// Nodes per dimension are given explicitly; they must be strictly
  /// increasing and include 0.
  GridSpec(std::vector<std::vector<double>> coords, std::vector<bool> wrap)
      : coords_(std::move(coords)), wrap_(std::move(wrap)) {
    if (coords_.empty()) throw Error("grid needs at least one dimension");
    if (wrap_.size() != coords_.size()) throw Error("grid wrap flags mismatch");
    strides_.assign(coords_.size(), 1);
    size_ = 1;
    for (std::size_t d = coords_.size(); d-- > 0;) {
      const auto& c = coords_[d];
      if (c.size() < 3 || c.size() % 2 == 0) throw Error("grid node counts must be odd and >= 3");
      for (std::size_t i = 1; i < c.size(); ++i)
        if (!(c[i] > c[i - 1])) throw Error("grid coordinates must be strictly increasing");
      if (c[c.size() / 2] != 0.0) throw Error("grid must contain the origin");
      strides_[d] = size_;
      size_ *= c.size();
    }
  }

  /// Uniform spacing when stretch == 0; otherwise nodes at
  /// hi * sinh(stretch * t) / sinh(stretch) for t uniform in [-1, 1], which
  /// concentrates nodes near the origin. Requires lo == -hi per dimension.
  static GridSpec make(const std::vector<int>& counts, const std::vector<double>& lo,
                       const std::vector<double>& hi, const std::vector<bool>& wrap,
                       const std::vector<double>& stretch = {}) {
    if (counts.size() != lo.size() || lo.size() != hi.size())
      throw Error("grid spec dimension mismatch");
    std::vector<std::vector<double>> coords(counts.size());
    for (std::size_t d = 0; d < counts.size(); ++d) {
      const int n = counts[d];
      if (n < 3 || n % 2 == 0) throw Error("grid node counts must be odd and >= 3");
      if (!(lo[d] < 0.0 && hi[d] > 0.0)) throw Error("grid box must straddle the origin");
      const double s = stretch.empty() ? 0.0 : stretch[d];
      const int half = (n - 1) / 2;
      coords[d].resize(n);
      for (int i = 0; i < n; ++i) {
        const int k = i - half;  // exact integer offset, 0 at the centre
        const double t = static_cast<double>(k) / half;
        const double bound = k < 0 ? -lo[d] : hi[d];
        double value;
        if (s > 0.0) {
          value = bound * std::sinh(s * t) / std::sinh(s);
          if (k == -half || k == half) value = bound * (k < 0 ? -1.0 : 1.0);
        } else {
          value = bound * t;
        }
        coords[d][i] = k == 0 ? 0.0 : value;
      }
    }
    return GridSpec(std::move(coords), wrap);
  }

  /// Default grid for an environment: its box, its wrap flags.
  static GridSpec for_environment(const Environment& env, const std::vector<int>& counts,
                                  const std::vector<double>& stretch = {}) {
    std::vector<double> lo(env.state_lo().data(), env.state_lo().data() + env.state_dim());
    std::vector<double> hi(env.state_hi().data(), env.state_hi().data() + env.state_dim());
    return make(counts, lo, hi, env.wrap_flags(), stretch);
  }

  int dim() const { return static_cast<int>(coords_.size()); }
  std::size_t size() const { return size_; }
  const std::vector<double>& coords(int d) const { return coords_[d]; }
  const std::vector<bool>& wrap_flags() const { return wrap_; }
  std::size_t stride(int d) const { return strides_[d]; }
  double lo(int d) const { return coords_[d].front(); }
  double hi(int d) const { return coords_[d].back(); }
  std::size_t corners() const { return std::size_t{1} << coords_.size(); }

  std::size_t origin_index() const {
    std::size_t idx = 0;
    for (int d = 0; d < dim(); ++d) idx += strides_[d] * (coords_[d].size() / 2);
    return idx;
  }

  int coordinate_index(std::size_t flat, int d) const {
    return static_cast<int>((flat / strides_[d]) % coords_[d].size());
  }

  /// Node coordinates, with wrapped dimensions mapped into [-pi, pi) so the
  /// +pi face denotes the same physical state as the -pi face.
  Vector node(std::size_t flat) const {
    Vector x(dim());
    for (int d = 0; d < dim(); ++d) {
      const double c = coords_[d][coordinate_index(flat, d)];
      x[d] = wrap_[d] ? wrap_angle(c) : c;
    }
    return x;
  }

  bool operator==(const GridSpec& other) const {
    return coords_ == other.coords_ && wrap_ == other.wrap_;
  }

 private:
  std::vector<std::vector<double>> coords_;
  std::vector<bool> wrap_;
  std::vector<std::size_t> strides_;
  std::size_t size_ = 0;
};

/// Multilinear interpolation weights for one query point.
struct Stencil {
  static constexpr int kMaxCorners = 16;  // up to 4 state dimensions
  std::array<std::uint32_t, kMaxCorners> index{};
  std::array<double, kMaxCorners> weight{};
  int count = 0;
  bool clamped = false;  // the query left the box in some non-wrapped dimension
};

inline void compute_stencil(const GridSpec& grid, const Vector& x, Stencil& out) {
  const int dims = grid.dim();
  const std::size_t corners = grid.corners();
  if (corners > static_cast<std::size_t>(Stencil::kMaxCorners))
    throw Error("interpolation supports at most 4 state dimensions");
  out.count = static_cast<int>(corners);
  std::fill_n(out.index.begin(), corners, 0u);
  std::fill_n(out.weight.begin(), corners, 1.0);
  out.clamped = false;
  for (int d = 0; d < dims; ++d) {
    const auto& c = grid.coords(d);
    double q = x[d];
    if (grid.wrap_flags()[d]) {
      const double period = c.back() - c.front();
      q = c.front() + std::fmod(q - c.front(), period);
      if (q < c.front()) q += period;
    } else if (q < c.front()) {
      q = c.front();
      out.clamped = true;
    } else if (q > c.back()) {
      q = c.back();
      out.clamped = true;
    }
    std::size_t hi_idx = std::upper_bound(c.begin(), c.end(), q) - c.begin();
    hi_idx = std::clamp<std::size_t>(hi_idx, 1, c.size() - 1);
    const std::size_t lo_idx = hi_idx - 1;
    const double t = std::clamp((q - c[lo_idx]) / (c[hi_idx] - c[lo_idx]), 0.0, 1.0);
    const std::size_t stride = grid.stride(d);
    for (std::size_t k = 0; k < corners; ++k) {
      if (k & (std::size_t{1} << d)) {
        out.index[k] += static_cast<std::uint32_t>(hi_idx * stride);
        out.weight[k] *= t;
      } else {
        out.index[k] += static_cast<std::uint32_t>(lo_idx * stride);
        out.weight[k] *= 1.0 - t;
      }
    }
  }
}

inline double apply_stencil(const Stencil& s, const std::vector<double>& values) {
  double acc = 0.0;
  for (int k = 0; k < s.count; ++k) acc += s.weight[k] * values[s.index[k]];
  return acc;
}

/// Interpolated value of a node field at x. Coordinates outside the box are
/// clamped to the face; `clamped` reports whether that happened.
inline double interpolate(const std::vector<double>& values, const GridSpec& grid,
                          const Vector& x, bool* clamped = nullptr) {
  Stencil s;
  compute_stencil(grid, x, s);
  if (clamped) *clamped = s.clamped;
  return apply_stencil(s, values);
}

/// Samples f at every node.
template <typename Fn>
std::vector<double> sample_on_grid(const GridSpec& grid, Fn&& f) {
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) values[i] = f(grid.node(i));
  return values;
}

/// Discretized input box: the product of per-dimension uniform samples
/// (odd count, so 0 is a member).
class InputSet {
 public:
  InputSet() = default;

  InputSet(const Vector& bound, const std::vector<int>& counts) {
    if (static_cast<int>(counts.size()) != bound.size())
      throw Error("input set dimension mismatch");
    std::size_t total = 1;
    for (int n : counts) {
      if (n < 1 || n % 2 == 0) throw Error("input sample counts must be odd");
      total *= n;
    }
    counts_ = counts;
    members_.reserve(total);
    for (std::size_t flat = 0; flat < total; ++flat) {
      Vector u(bound.size());
      std::size_t rest = flat;
      for (int d = static_cast<int>(counts.size()) - 1; d >= 0; --d) {
        const int n = counts[d];
        const int i = static_cast<int>(rest % n);
        rest /= n;
        // Integer numerator keeps the endpoints at exactly +-H and the centre at 0.
        u[d] = n == 1 ? 0.0 : bound[d] * static_cast<double>(2 * i - (n - 1)) / (n - 1);
      }
      members_.push_back(std::move(u));
    }
    by_norm_.resize(total);
    std::iota(by_norm_.begin(), by_norm_.end(), 0);
    std::stable_sort(by_norm_.begin(), by_norm_.end(), [this](int a, int b) {
      return members_[a].squaredNorm() < members_[b].squaredNorm();
    });
  }

  /// Uniform samples of the environment's input box, `count` per dimension.
  static InputSet for_environment(const Environment& env, int count) {
    return InputSet(env.input_bound(), std::vector<int>(env.input_dim(), count));
  }

  std::size_t size() const { return members_.size(); }
  const Vector& operator[](std::size_t i) const { return members_[i]; }
  const std::vector<Vector>& members() const { return members_; }
  /// Member indices ordered by (norm, index): the argmin tie-break order.
  const std::vector<int>& tie_break_order() const { return by_norm_; }
  bool scalar() const { return counts_.size() == 1; }
  int zero_index() const { return by_norm_.front(); }

 private:
  std::vector<int> counts_;
  std::vector<Vector> members_;
  std::vector<int> by_norm_;
};

/// One real per grid node plus solver metadata.
struct ValueField {
  std::vector<double> values;
  CostKind cost_kind = CostKind::kStandard;
  double gamma = 0.0;
  double bellman_residual = 0.0;
  int sweeps = 0;

  double operator[](std::size_t i) const { return values[i]; }
  std::size_t size() const { return values.size(); }
};

/// Per-node input choice. `index` is the best member of the InputSet; the
/// applied `input` may be a refined value between neighbouring members.
struct TabularPolicy {
  std::vector<int> index;
  std::vector<Vector> input;

  std::size_t size() const { return index.size(); }
  bool operator==(const TabularPolicy& other) const {
    if (index != other.index || input.size() != other.input.size()) return false;
    for (std::size_t i = 0; i < input.size(); ++i)
      if (input[i] != other.input[i]) return false;
    return true;
  }
};

/// Barycentric interpolation of a tabular policy's inputs.
inline Vector interpolate_policy(const TabularPolicy& policy, const GridSpec& grid,
                                 const Vector& x) {
  Stencil s;
  compute_stencil(grid, x, s);
  Vector u = Vector::Zero(policy.input.front().size());
  for (int k = 0; k < s.count; ++k)
    if (s.weight[k] != 0.0) u += s.weight[k] * policy.input[s.index[k]];
  return u;
}

}  // namespace clfshape
