#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace trajgp {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// Row-major storage is the canonical layout for every tensor value.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Operand shapes that do not conform to an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations and diverged optimization.
class NumericalError : public Error {
 public:
  using Error::Error;
};

/// Raised when a Cholesky factorization meets a non-positive pivot.
class CholeskyError : public NumericalError {
 public:
  CholeskyError(Eigen::Index minor, const std::string& what)
      : NumericalError(what), minor_(minor) {}
  /// Zero-based index of the leading minor that is not positive definite.
  Eigen::Index minor() const noexcept { return minor_; }

 private:
  Eigen::Index minor_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

/// Derives an independent 64-bit seed for a named random stream.
///
/// Every consumer of randomness asks for its own stream (e.g. "split",
/// "init", "dropout") plus a counter, so adding a new consumer never shifts
/// the numbers another one sees.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream,
                          std::uint64_t counter = 0) noexcept;

inline double softplus(double x) noexcept {
  return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

/// Inverse of softplus for y > 0.
inline double inverse_softplus(double y) {
  if (!(y > 0.0)) throw NumericalError("inverse_softplus requires a positive argument");
  return y > 30.0 ? y + std::log1p(-std::exp(-y)) : std::log(std::expm1(y));
}

inline double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace trajgp
