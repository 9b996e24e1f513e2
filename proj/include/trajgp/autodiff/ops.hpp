#pragma once

#include "trajgp/autodiff/tape.hpp"

#include <random>
#include <span>

namespace trajgp::ad {

// Elementwise binary ops broadcast like 2-D numpy: each dimension of each
// operand must equal the output dimension or be 1.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var neg(Var a);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var matmul(Var a, Var b);
Var transpose(Var a);

/// Sum of all entries (1x1).
Var sum(Var a);
/// Mean of all entries (1x1).
Var mean(Var a);
/// Column sums, 1 x cols.
Var sum_rows(Var a);
/// Row sums, rows x 1.
Var sum_cols(Var a);
/// Column means, 1 x cols (mean pooling over positions).
Var mean_rows(Var a);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var softplus(Var a);
Var relu(Var a);
Var square(Var a);

/// Softmax over the last axis (each row sums to one).
Var softmax_rows(Var a);
/// Normalizes every row to zero mean and unit variance (no affine part).
Var layer_norm_rows(Var a, double eps = 1e-5);

Var slice(Var a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols);
Var concat_rows(std::span<const Var> parts);
Var concat_cols(std::span<const Var> parts);
Var broadcast_to(Var a, Eigen::Index rows, Eigen::Index cols);

/// D(i,j) = ||a_i - b_j||^2 over the rows of a and b.
Var squared_distance(Var a, Var b);

/// Lower Cholesky factor; only the lower triangle of the input is read and
/// the input gradient is symmetrized.
Var cholesky(Var a);
/// X with L X = B, L lower triangular.
Var solve_lower(Var l, Var b);
/// X with L^T X = B, L lower triangular.
Var solve_lower_transposed(Var l, Var b);
/// log det(L L^T) = 2 sum log L_ii.
Var logdet_from_cholesky(Var l);

/// Lower triangle; with strict == true the diagonal is zeroed as well.
Var tril(Var a, bool strict = false);
/// Diagonal of a square matrix as an n x 1 column.
Var diag_part(Var a);
/// n x n diagonal matrix from an n x 1 column.
Var diag_embed(Var v);
/// a + eps * I.
Var add_diag(Var a, double eps);

/// Inverted dropout; identity when rate == 0 or rng == nullptr.
Var dropout(Var a, double rate, std::mt19937_64* rng);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(double s, Var a) { return scale(a, s); }
inline Var operator*(Var a, double s) { return scale(a, s); }

}  // namespace trajgp::ad
