#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace clfshape {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Which long-horizon cost a value field or policy refers to.
///  - kStandard: sum of gamma^k * l(x_k, u_k)
///  - kShaped:   sum of gamma^k * (W(x_{k+1}) - W(x_k) + l(x_k, u_k))
enum class CostKind { kStandard, kShaped };

inline std::string to_string(CostKind kind) {
  return kind == CostKind::kStandard ? "standard" : "shaped";
}

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Riccati iteration did not settle.
class DivergedError : public Error {
 public:
  using Error::Error;
};

/// Value iteration hit its sweep budget.
class NotConvergedError : public Error {
 public:
  NotConvergedError(const std::string& what, double last_residual)
      : Error(what), last_residual_(last_residual) {}
  double last_residual() const { return last_residual_; }

 private:
  double last_residual_;
};

/// Policy evaluation blew up (values beyond 1e12) or never settled.
class PolicyUnstableError : public Error {
 public:
  using Error::Error;
};

class InputBoundsError : public Error {
 public:
  using Error::Error;
};

class MetadataMismatchError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

inline CostKind parse_cost_kind(std::string_view name) {
  if (name == "standard") return CostKind::kStandard;
  if (name == "shaped") return CostKind::kShaped;
  throw ConfigError("unknown cost kind '" + std::string(name) + "'");
}

/// Maps an angle to [-pi, pi).
inline double wrap_angle(double angle) {
  constexpr double kPi = std::numbers::pi;
  constexpr double kTwoPi = 2.0 * std::numbers::pi;
  if (angle >= -kPi && angle < kPi) return angle;
  double wrapped = angle - kTwoPi * std::floor((angle + kPi) / kTwoPi);
  if (wrapped >= kPi) wrapped -= kTwoPi;
  if (wrapped < -kPi) wrapped += kTwoPi;
  return wrapped;
}

/// Runs body(begin, end) over [0, n) split into contiguous static chunks.
/// Each index is handled by exactly one chunk, so any body that only writes
/// its own slots gives the same result for every thread count.
template <typename Body>
void parallel_for(std::size_t n, int threads, Body&& body) {
  const std::size_t workers =
      std::max<std::size_t>(1, std::min<std::size_t>(threads > 0 ? threads : 1, n));
  if (workers == 1) {
    body(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w) {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&body, begin, end] { body(begin, end); });
  }
  for (auto& t : pool) t.join();
}

}  // namespace clfshape
