#pragma once

#include "trajgp/autodiff/ops.hpp"
#include "trajgp/common.hpp"

namespace trajgp {

/// Squared-exponential kernel hyperparameters (constrained values).
struct KernelParams {
  double lengthscale = 1.0;
  double outputscale = 1.0;
};

/// k(a, b) = s^2 exp(-||a - b||^2 / (2 l^2)) for every row pair of `a`, `b`.
template <typename DerivedA, typename DerivedB>
Matrix kernel_matrix(const KernelParams& params, const Eigen::MatrixBase<DerivedA>& a,
                     const Eigen::MatrixBase<DerivedB>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("kernel_matrix: inputs have " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.cols()) + " columns");
  }
  if (!a.allFinite() || !b.allFinite()) throw NumericalError("kernel_matrix: non-finite inputs");
  if (!(params.lengthscale > 0.0) || !(params.outputscale > 0.0)) {
    throw NumericalError("kernel_matrix: lengthscale and outputscale must be positive");
  }
  const double inv = 1.0 / (2.0 * params.lengthscale * params.lengthscale);
  Matrix k(a.rows(), b.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      k(i, j) = params.outputscale * std::exp(-(a.row(i) - b.row(j)).squaredNorm() * inv);
    }
  }
  return k;
}

/// Differentiable variant; `lengthscale` and `outputscale` are 1 x 1.
ad::Var kernel_matrix(ad::Var lengthscale, ad::Var outputscale, ad::Var a, ad::Var b);

/// Per-row Gaussian predictive distribution. `latent_variance` excludes
/// observation noise; `variance` includes it.
struct GaussianPrediction {
  Vector mean;
  Vector latent_variance;
  Vector variance;

  Eigen::Index size() const noexcept { return mean.size(); }
};

}  // namespace trajgp
