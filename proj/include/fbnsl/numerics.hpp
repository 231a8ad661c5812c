#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <string>

#include "fbnsl/error.hpp"

namespace fbnsl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

template <typename Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.derived().array().isFinite().all();
}

template <typename Derived>
void require_square(const Eigen::MatrixBase<Derived>& m, const char* what) {
  if (m.rows() != m.cols()) {
    throw DimensionError(std::string(what) + ": expected a square matrix, got " +
                         std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  }
}

/// Matrix exponential by scaling and squaring around a truncated Taylor core.
///
/// The argument is scaled by 2^-s so that its 1-norm is at most 1/2, the
/// series is summed until the next term falls below machine epsilon relative
/// to the partial sum, and the result is squared s times.
template <typename Derived>
MatrixX<typename Derived::Scalar> matexp(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  require_square(m, "matexp");
  const Eigen::Index n = m.rows();
  if (!all_finite(m)) throw NumericRangeError("matexp: non-finite input");
  if (n == 0) return MatrixX<Scalar>(0, 0);

  const Scalar norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > Scalar(0.5)) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / Scalar(0.5))));
  }
  // e^{|M|} overflows binary64 long before 2^64 scaling would be needed.
  if (squarings > 64) {
    throw NumericRangeError("matexp: norm " + std::to_string(static_cast<double>(norm)) +
                            " exceeds the scaling budget");
  }

  const MatrixX<Scalar> a = m / std::ldexp(Scalar(1), squarings);
  MatrixX<Scalar> result = MatrixX<Scalar>::Identity(n, n);
  MatrixX<Scalar> term = MatrixX<Scalar>::Identity(n, n);
  const Scalar eps = Eigen::NumTraits<Scalar>::epsilon();
  for (int k = 1; k <= 40; ++k) {
    term = (term * a) / Scalar(k);
    result += term;
    if (term.cwiseAbs().colwise().sum().maxCoeff() <=
        eps * result.cwiseAbs().colwise().sum().maxCoeff()) {
      break;
    }
  }
  for (int i = 0; i < squarings; ++i) result = result * result;

  if (!all_finite(result)) throw NumericRangeError("matexp: result overflowed");
  return result;
}

/// exp(M) - I without forming the identity: the Taylor core starts at the
/// linear term and squaring uses E <- E(E + 2I). Keeps full relative accuracy
/// when the off-identity part is tiny, where matexp(m) - I would cancel.
template <typename Derived>
MatrixX<typename Derived::Scalar> matexpm1(const Eigen::MatrixBase<Derived>& m) {
  using Scalar = typename Derived::Scalar;
  require_square(m, "matexpm1");
  const Eigen::Index n = m.rows();
  if (!all_finite(m)) throw NumericRangeError("matexpm1: non-finite input");
  if (n == 0) return MatrixX<Scalar>(0, 0);

  const Scalar norm = m.cwiseAbs().colwise().sum().maxCoeff();
  int squarings = 0;
  if (norm > Scalar(0.5)) {
    squarings = static_cast<int>(std::ceil(std::log2(norm / Scalar(0.5))));
  }
  if (squarings > 64) {
    throw NumericRangeError("matexpm1: norm " + std::to_string(static_cast<double>(norm)) +
                            " exceeds the scaling budget");
  }

  const MatrixX<Scalar> a = m / std::ldexp(Scalar(1), squarings);
  MatrixX<Scalar> term = a;
  MatrixX<Scalar> result = a;
  const Scalar eps = Eigen::NumTraits<Scalar>::epsilon();
  for (int k = 2; k <= 40; ++k) {
    term = (term * a) / Scalar(k);
    result += term;
    if (term.cwiseAbs().colwise().sum().maxCoeff() <=
        eps * result.cwiseAbs().colwise().sum().maxCoeff()) {
      break;
    }
  }
  for (int i = 0; i < squarings; ++i) {
    MatrixX<Scalar> shifted = result;
    shifted.diagonal().array() += Scalar(2);
    result = result * shifted;
  }

  if (!all_finite(result)) throw NumericRangeError("matexpm1: result overflowed");
  return result;
}

/// h(W) = tr(exp(W∘W)) - d. Zero exactly when the support of W is acyclic.
template <typename Derived>
typename Derived::Scalar acyclicity(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  require_square(w, "acyclicity");
  const Scalar h = matexpm1(w.cwiseProduct(w)).trace();
  return h < Scalar(0) ? Scalar(0) : h;
}

/// Gradient of acyclicity(): exp(W∘W)^T ∘ 2W.
template <typename Derived>
MatrixX<typename Derived::Scalar> acyclicity_grad(const Eigen::MatrixBase<Derived>& w) {
  using Scalar = typename Derived::Scalar;
  require_square(w, "acyclicity_grad");
  const MatrixX<Scalar> e = matexp(w.cwiseProduct(w));
  return e.transpose().cwiseProduct(Scalar(2) * w);
}

/// Value and gradient from a single exponential.
template <typename Derived>
typename Derived::Scalar acyclicity_with_grad(const Eigen::MatrixBase<Derived>& w,
                                              MatrixX<typename Derived::Scalar>& grad) {
  using Scalar = typename Derived::Scalar;
  require_square(w, "acyclicity");
  MatrixX<Scalar> e = matexpm1(w.cwiseProduct(w));
  const Scalar h = e.trace();
  e.diagonal().array() += Scalar(1);
  grad = e.transpose().cwiseProduct(Scalar(2) * w);
  return h < Scalar(0) ? Scalar(0) : h;
}

/// Minimal-norm subgradient convention for ℓ1 terms: sign(0) = 0.
template <typename Derived>
auto l1_subgradient(const Eigen::MatrixBase<Derived>& m) {
  return m.unaryExpr([](typename Derived::Scalar v) {
    using S = typename Derived::Scalar;
    return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0));
  });
}

/// Solves A X = C for symmetric positive-definite A via Cholesky.
Matrix solve_spd_linear(const Matrix& a, const Matrix& c);

// ---------------------------------------------------------------------------
// L-BFGS

struct SolverOptions {
  int max_iterations = 500;
  double gradient_tolerance = 1e-6;
  int history_size = 10;
  /// Stop when an accepted step decreases f by less than this, relative to max(1, |f|).
  double function_tolerance = 1e-6;

  void validate() const;
};

enum class SolverStatus {
  kGradientConverged,
  kFunctionConverged,
  kMaxIterations,
  kLineSearchFailed,
};

const char* to_string(SolverStatus status);

struct SolverResult {
  Vector x;
  double value = 0.0;
  Vector gradient;
  int iterations = 0;
  SolverStatus status = SolverStatus::kMaxIterations;

  bool degraded() const { return status == SolverStatus::kLineSearchFailed; }
};

/// Returns f(x) and writes ∇f(x) (or a subgradient) into grad.
using Objective = std::function<double(const Vector& x, Vector& grad)>;

/// Limited-memory BFGS with backtracking Armijo line search. The returned
/// point is the best iterate seen; its value never exceeds f(x0).
///
/// A NaN value or gradient raises NumericError naming the iteration. A trial
/// point whose value is +inf or whose evaluation raises NumericRangeError is
/// rejected by the line search instead.
SolverResult lbfgs_minimize(const Objective& objective, const Vector& x0,
                            const SolverOptions& options = {});

/// Orthant-wise L-BFGS for f(x) + l1_weight·‖x‖₁ with smooth f. Steps use the
/// minimal-norm subgradient (zero at x_i = 0 when |∂f/∂x_i| ≤ l1_weight) and
/// never cross a coordinate's orthant in one step, so exact zeros are reached.
/// The result's value includes the ℓ1 term; its gradient is that subgradient.
SolverResult owlqn_minimize(const Objective& smooth, double l1_weight, const Vector& x0,
                            const SolverOptions& options = {});

/// Minimal-norm element of ∂(f + l1_weight·‖·‖₁) at x, given ∇f(x).
Vector l1_pseudo_gradient(const Vector& x, const Vector& smooth_grad, double l1_weight);

}  // namespace fbnsl
