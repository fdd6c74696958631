#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "clfshape/core.hpp"
#include "clfshape/dynamics.hpp"

namespace clfshape {

/// x -> x^T P x with P stored symmetrized.
class QuadraticForm {
 public:
  QuadraticForm() = default;
  explicit QuadraticForm(const Matrix& p) : p_(0.5 * (p + p.transpose())) {
    if (p.rows() != p.cols()) throw Error("quadratic form matrix must be square");
  }

  static QuadraticForm diagonal(const std::vector<double>& diag) {
    Vector d(static_cast<int>(diag.size()));
    for (std::size_t i = 0; i < diag.size(); ++i) d[static_cast<int>(i)] = diag[i];
    return QuadraticForm(Matrix(d.asDiagonal()));
  }

  static QuadraticForm zero(int n) { return QuadraticForm(Matrix::Zero(n, n)); }

  double operator()(const Vector& x) const { return x.dot(p_ * x); }

  const Matrix& matrix() const { return p_; }
  int dim() const { return static_cast<int>(p_.rows()); }

  QuadraticForm scaled(double c) const { return QuadraticForm(c * p_); }

  double min_eigenvalue() const {
    if (p_.size() == 0) return 0.0;
    return Eigen::SelfAdjointEigenSolver<Matrix>(p_, Eigen::EigenvaluesOnly).eigenvalues()(0);
  }

  bool is_positive_definite(double tol = 1e-10) const { return min_eigenvalue() > tol; }
  bool is_zero() const { return p_.isZero(0.0); }

  bool operator==(const QuadraticForm& other) const { return p_ == other.p_; }

 private:
  Matrix p_;
};

// ---------------------------------------------------------------------------
// Discounted Riccati equation
//
//   P = Q + g A'PA - g^2 A'PB (R + g B'PB)^-1 B'PA,   K = g (R + g B'PB)^-1 B'PA
//
// The optimal discounted LQR cost-to-go is x'Px under u = -Kx.

struct DareSolution {
  QuadraticForm value;
  Matrix gain;
  int iterations = 0;
};

inline Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& Q, const Matrix& R,
                          double gamma, const Matrix& P) {
  const Matrix S = R + gamma * B.transpose() * P * B;
  const Matrix BtPA = B.transpose() * P * A;
  return Q + gamma * A.transpose() * P * A -
         gamma * gamma * BtPA.transpose() * S.ldlt().solve(BtPA);
}

inline double dare_residual(const Matrix& A, const Matrix& B, const Matrix& Q,
                            const Matrix& R, double gamma, const Matrix& P) {
  return (P - riccati_map(A, B, Q, R, gamma, P)).cwiseAbs().rowwise().sum().maxCoeff();
}

/// Fixed-point iteration from P0 = Q (or `initial` when given). Stops when
/// the infinity-norm step falls below tol * max(1, |P|_inf).
inline DareSolution solve_dare_discounted(const Matrix& A, const Matrix& B, const Matrix& Q,
                                          const Matrix& R, double gamma,
                                          int max_iterations = 100000, double tol = 1e-12,
                                          const Matrix* initial = nullptr) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("DARE discount must lie in [0, 1]");
  if (A.rows() != A.cols() || B.rows() != A.rows() || Q.rows() != A.rows() ||
      R.rows() != B.cols())
    throw Error("DARE dimension mismatch");
  Matrix P = initial ? *initial : Q;
  for (int it = 1; it <= max_iterations; ++it) {
    Matrix next = riccati_map(A, B, Q, R, gamma, P);
    next = 0.5 * (next + next.transpose());
    if (!next.allFinite()) throw DivergedError("DARE iteration produced non-finite values");
    const double step = (next - P).cwiseAbs().rowwise().sum().maxCoeff();
    const double scale = std::max(1.0, next.cwiseAbs().rowwise().sum().maxCoeff());
    P = std::move(next);
    if (step < tol * scale) {
      const Matrix S = R + gamma * B.transpose() * P * B;
      Matrix K = gamma * S.ldlt().solve(B.transpose() * P * A);
      return {QuadraticForm(P), K, it};
    }
  }
  throw DivergedError("DARE iteration did not converge within " +
                      std::to_string(max_iterations) + " iterations");
}

/// Candidate CLF from the origin linearization, ignoring input bounds.
inline DareSolution synthesize_clf(const Environment& env, const Matrix& Q, const Matrix& R,
                                   double gamma_design = 1.0) {
  const Linearization lin = linearize(env);
  return solve_dare_discounted(lin.A, lin.B, Q, R, gamma_design);
}

// ---------------------------------------------------------------------------
// CSV: first line is n, then n comma-separated rows.

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline void write_quadratic_csv(const QuadraticForm& form, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  const Matrix& P = form.matrix();
  out << P.rows() << "\n";
  for (int i = 0; i < P.rows(); ++i) {
    for (int j = 0; j < P.cols(); ++j) out << (j ? "," : "") << format_double(P(i, j));
    out << "\n";
  }
}

inline QuadraticForm read_quadratic_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(path + ": missing header");
  const int n = std::stoi(line);
  if (n <= 0) throw Error(path + ": bad dimension");
  Matrix P(n, n);
  for (int i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw Error(path + ": too few rows");
    std::stringstream row(line);
    std::string cell;
    for (int j = 0; j < n; ++j) {
      if (!std::getline(row, cell, ',')) throw Error(path + ": too few columns");
      P(i, j) = std::stod(cell);
    }
  }
  return QuadraticForm(P);
}

}  // namespace clfshape
