#pragma once

#include "trajgp/common.hpp"

#include <sstream>

namespace trajgp {

/// Escalating diagonal jitter applied before factorizing kernel matrices.
struct JitterPolicy {
  double initial = 1e-6;
  double factor = 10.0;
  double maximum = 1e-2;
};

/// Lower Cholesky factor of a symmetric positive-definite matrix.
///
/// Only the lower triangle of `a` is read. Throws CholeskyError carrying the
/// zero-based index of the first leading minor that is not positive definite.
template <typename Derived>
MatrixX<typename Derived::Scalar> cholesky_lower(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() != a.cols()) {
    throw ShapeError("cholesky: matrix is " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + ", expected square");
  }
  const Eigen::Index n = a.rows();
  MatrixX<Scalar> l = MatrixX<Scalar>::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    Scalar d = a(j, j);
    if (j > 0) d -= l.row(j).head(j).squaredNorm();
    if (!(d > Scalar(0)) || !std::isfinite(d)) {
      std::ostringstream msg;
      msg << "cholesky: leading minor " << j << " of " << n
          << " is not positive definite (pivot " << d << ")";
      throw CholeskyError(j, msg.str());
    }
    const Scalar ljj = std::sqrt(d);
    l(j, j) = ljj;
    if (j + 1 < n) {
      auto below = l.col(j).tail(n - j - 1);
      below = a.col(j).tail(n - j - 1);
      if (j > 0) below.noalias() -= l.bottomLeftCorner(n - j - 1, j) * l.row(j).head(j).transpose();
      below /= ljj;
    }
  }
  return l;
}

/// Result of a jittered factorization: the factor and the jitter that was used.
template <typename Scalar>
struct JitteredCholesky {
  MatrixX<Scalar> factor;
  Scalar jitter;
};

/// Factorizes `a + eps*I`, starting at policy.initial and escalating by
/// policy.factor until success or policy.maximum is exceeded.
template <typename Derived>
JitteredCholesky<typename Derived::Scalar> cholesky_with_jitter(
    const Eigen::MatrixBase<Derived>& a, const JitterPolicy& policy = {}) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> work = a;
  Scalar eps = Scalar(policy.initial);
  for (;;) {
    work.diagonal() = a.diagonal().array() + eps;
    try {
      return {cholesky_lower(work), eps};
    } catch (const CholeskyError& e) {
      Scalar next = eps > Scalar(0) ? eps * Scalar(policy.factor) : Scalar(1e-6);
      if (next > Scalar(policy.maximum) * Scalar(1.0000001)) {
        std::ostringstream msg;
        msg << e.what() << "; jitter escalation exhausted at " << eps;
        throw CholeskyError(e.minor(), msg.str());
      }
      eps = next;
    }
  }
}

/// log|A| from its lower Cholesky factor.
template <typename Derived>
typename Derived::Scalar logdet_from_cholesky(const Eigen::MatrixBase<Derived>& l) {
  return typename Derived::Scalar(2) * l.diagonal().array().log().sum();
}

/// Solves (L Lᵀ) X = B given the lower factor L.
template <typename DerivedL, typename DerivedB>
MatrixX<typename DerivedB::Scalar> cholesky_solve(const Eigen::MatrixBase<DerivedL>& l,
                                                  const Eigen::MatrixBase<DerivedB>& b) {
  MatrixX<typename DerivedB::Scalar> x = l.template triangularView<Eigen::Lower>().solve(b);
  l.transpose().template triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

}  // namespace trajgp
