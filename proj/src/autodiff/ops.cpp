#include "trajgp/autodiff/ops.hpp"

#include "trajgp/linalg.hpp"

#include <cmath>
#include <string>

namespace trajgp::ad {
namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

Tape& tape_of(Var a) {
  if (!a.valid()) throw Error("operation on an unbound Var");
  return *a.tape();
}

Eigen::Index broadcast_dim(Eigen::Index x, Eigen::Index y, const char* op, const Matrix& a,
                           const Matrix& b) {
  if (x == y || y == 1) return x;
  if (x == 1) return y;
  throw ShapeError(std::string(op) + ": cannot broadcast " + shape_str(a) + " with " + shape_str(b));
}

Matrix expand(const Matrix& m, Eigen::Index rows, Eigen::Index cols) {
  if (m.rows() == rows && m.cols() == cols) return m;
  return m.replicate(rows / m.rows(), cols / m.cols());
}

// Sums a broadcast gradient back down to the operand's shape.
Matrix reduce_to(const Matrix& g, Eigen::Index rows, Eigen::Index cols) {
  if (g.rows() == rows && g.cols() == cols) return g;
  Matrix r = g;
  if (rows == 1 && r.rows() != 1) r = r.colwise().sum().eval();
  if (cols == 1 && r.cols() != 1) r = r.rowwise().sum().eval();
  return r;
}

template <typename Forward, typename Grad>
Var unary(std::string_view op, Var a, Forward forward, Grad grad) {
  Matrix out = forward(a.value());
  return tape_of(a).record(op, std::move(out), {a}, [grad](BackwardContext& ctx) {
    ctx.accumulate(0, grad(ctx.input(0), ctx.output(), ctx.grad()));
  });
}

}  // namespace

Var add(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "add", av, bv);
  const Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "add", av, bv);
  Matrix out = expand(av, r, c) + expand(bv, r, c);
  return tape_of(a).record("add", std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.accumulate(0, reduce_to(ctx.grad(), ctx.input(0).rows(), ctx.input(0).cols()));
    if (ctx.wants(1)) ctx.accumulate(1, reduce_to(ctx.grad(), ctx.input(1).rows(), ctx.input(1).cols()));
  });
}

Var sub(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "sub", av, bv);
  const Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "sub", av, bv);
  Matrix out = expand(av, r, c) - expand(bv, r, c);
  return tape_of(a).record("sub", std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.accumulate(0, reduce_to(ctx.grad(), ctx.input(0).rows(), ctx.input(0).cols()));
    if (ctx.wants(1)) {
      ctx.accumulate(1, -reduce_to(ctx.grad(), ctx.input(1).rows(), ctx.input(1).cols()));
    }
  });
}

Var mul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "mul", av, bv);
  const Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "mul", av, bv);
  Matrix out = expand(av, r, c).cwiseProduct(expand(bv, r, c));
  return tape_of(a).record("mul", std::move(out), {a, b}, [r, c](BackwardContext& ctx) {
    const Matrix& x = ctx.input(0);
    const Matrix& y = ctx.input(1);
    if (ctx.wants(0)) {
      ctx.accumulate(0, reduce_to(ctx.grad().cwiseProduct(expand(y, r, c)), x.rows(), x.cols()));
    }
    if (ctx.wants(1)) {
      ctx.accumulate(1, reduce_to(ctx.grad().cwiseProduct(expand(x, r, c)), y.rows(), y.cols()));
    }
  });
}

Var div(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  const Eigen::Index r = broadcast_dim(av.rows(), bv.rows(), "div", av, bv);
  const Eigen::Index c = broadcast_dim(av.cols(), bv.cols(), "div", av, bv);
  Matrix out = expand(av, r, c).cwiseQuotient(expand(bv, r, c));
  return tape_of(a).record("div", std::move(out), {a, b}, [r, c](BackwardContext& ctx) {
    const Matrix& y = ctx.input(1);
    const Matrix ye = expand(y, r, c);
    if (ctx.wants(0)) {
      const Matrix& x = ctx.input(0);
      ctx.accumulate(0, reduce_to(ctx.grad().cwiseQuotient(ye), x.rows(), x.cols()));
    }
    if (ctx.wants(1)) {
      Matrix gy = -ctx.grad().cwiseProduct(ctx.output()).cwiseQuotient(ye);
      ctx.accumulate(1, reduce_to(gy, y.rows(), y.cols()));
    }
  });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double s) {
  return unary("scale", a, [s](const Matrix& x) -> Matrix { return s * x; },
               [s](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return s * g; });
}

Var add_scalar(Var a, double s) {
  return unary("add_scalar", a, [s](const Matrix& x) -> Matrix { return x.array() + s; },
               [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Var matmul(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.rows()) {
    throw ShapeError("matmul: inner dimensions differ (" + shape_str(av) + " * " + shape_str(bv) + ")");
  }
  Matrix out = av * bv;
  return tape_of(a).record("matmul", std::move(out), {a, b}, [](BackwardContext& ctx) {
    if (ctx.wants(0)) ctx.accumulate(0, ctx.grad() * ctx.input(1).transpose());
    if (ctx.wants(1)) ctx.accumulate(1, ctx.input(0).transpose() * ctx.grad());
  });
}

Var transpose(Var a) {
  return unary("transpose", a, [](const Matrix& x) -> Matrix { return x.transpose(); },
               [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g.transpose(); });
}

Var sum(Var a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return tape_of(a).record("sum", std::move(out), {a}, [](BackwardContext& ctx) {
    const Matrix& x = ctx.input(0);
    ctx.accumulate(0, Matrix::Constant(x.rows(), x.cols(), ctx.grad()(0, 0)));
  });
}

Var mean(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) throw ShapeError("mean of an empty tensor");
  return scale(sum(a), 1.0 / n);
}

Var sum_rows(Var a) {
  Matrix out = a.value().colwise().sum();
  return tape_of(a).record("sum_rows", std::move(out), {a}, [](BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad().replicate(ctx.input(0).rows(), 1));
  });
}

Var sum_cols(Var a) {
  Matrix out = a.value().rowwise().sum();
  return tape_of(a).record("sum_cols", std::move(out), {a}, [](BackwardContext& ctx) {
    ctx.accumulate(0, ctx.grad().replicate(1, ctx.input(0).cols()));
  });
}

Var mean_rows(Var a) {
  if (a.rows() == 0) throw ShapeError("mean_rows of a tensor with no rows");
  return scale(sum_rows(a), 1.0 / static_cast<double>(a.rows()));
}

Var exp(Var a) {
  return unary("exp", a, [](const Matrix& x) -> Matrix { return x.array().exp(); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix { return g.cwiseProduct(y); });
}

Var log(Var a) {
  if ((a.value().array() <= 0.0).any()) throw NumericalError("log of a non-positive value");
  return unary("log", a, [](const Matrix& x) -> Matrix { return x.array().log(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix { return g.cwiseQuotient(x); });
}

Var tanh(Var a) {
  return unary("tanh", a, [](const Matrix& x) -> Matrix { return x.array().tanh(); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 return g.array() * (1.0 - y.array().square());
               });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a,
               [](const Matrix& x) -> Matrix { return x.unaryExpr([](double v) { return trajgp::sigmoid(v); }); },
               [](const Matrix&, const Matrix& y, const Matrix& g) -> Matrix {
                 return g.array() * y.array() * (1.0 - y.array());
               });
}

Var softplus(Var a) {
  return unary("softplus", a,
               [](const Matrix& x) -> Matrix { return x.unaryExpr([](double v) { return trajgp::softplus(v); }); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return g.cwiseProduct(x.unaryExpr([](double v) { return trajgp::sigmoid(v); }));
               });
}

Var relu(Var a) {
  return unary("relu", a, [](const Matrix& x) -> Matrix { return x.cwiseMax(0.0); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix {
                 return (x.array() > 0.0).select(g, 0.0);
               });
}

Var square(Var a) {
  return unary("square", a, [](const Matrix& x) -> Matrix { return x.array().square(); },
               [](const Matrix& x, const Matrix&, const Matrix& g) -> Matrix { return 2.0 * g.cwiseProduct(x); });
}

Var softmax_rows(Var a) {
  const Matrix& x = a.value();
  Matrix out(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double m = x.row(i).maxCoeff();
    out.row(i) = (x.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return tape_of(a).record("softmax_rows", std::move(out), {a}, [](BackwardContext& ctx) {
    const Matrix& y = ctx.output();
    const Matrix gy = ctx.grad().cwiseProduct(y);
    const Vector s = gy.rowwise().sum();
    Matrix gx = gy - y.cwiseProduct(s.replicate(1, y.cols()));
    ctx.accumulate(0, gx);
  });
}

Var layer_norm_rows(Var a, double eps) {
  const Matrix& x = a.value();
  const Eigen::Index n = x.cols();
  if (n == 0) throw ShapeError("layer_norm_rows on a tensor with no columns");
  Matrix out(x.rows(), n);
  Vector inv_std(x.rows());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double mu = x.row(i).mean();
    const double var = (x.row(i).array() - mu).square().mean();
    inv_std(i) = 1.0 / std::sqrt(var + eps);
    out.row(i) = (x.row(i).array() - mu) * inv_std(i);
  }
  return tape_of(a).record("layer_norm_rows", std::move(out), {a}, [inv_std](BackwardContext& ctx) {
    const Matrix& xhat = ctx.output();
    const Matrix& g = ctx.grad();
    Matrix gx(g.rows(), g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      const double gm = g.row(i).mean();
      const double gxm = g.row(i).dot(xhat.row(i)) / static_cast<double>(g.cols());
      gx.row(i) = inv_std(i) * (g.row(i).array() - gm - xhat.row(i).array() * gxm);
    }
    ctx.accumulate(0, gx);
  });
}

Var slice(Var a, Eigen::Index row, Eigen::Index rows, Eigen::Index col, Eigen::Index cols) {
  const Matrix& x = a.value();
  if (row < 0 || col < 0 || rows < 0 || cols < 0 || row + rows > x.rows() || col + cols > x.cols()) {
    throw ShapeError("slice: block (" + std::to_string(row) + "," + std::to_string(col) + ")+" +
                     std::to_string(rows) + "x" + std::to_string(cols) + " outside " + shape_str(x));
  }
  Matrix out = x.block(row, col, rows, cols);
  return tape_of(a).record("slice", std::move(out), {a}, [row, col](BackwardContext& ctx) {
    const Matrix& x = ctx.input(0);
    Matrix g = Matrix::Zero(x.rows(), x.cols());
    g.block(row, col, ctx.grad().rows(), ctx.grad().cols()) = ctx.grad();
    ctx.accumulate(0, g);
  });
}

Var concat_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no operands");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: column counts differ");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index r = 0;
  for (const Var& p : parts) {
    offsets.push_back(r);
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
  }
  return tape_of(parts.front())
      .record("concat_rows", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [offsets](BackwardContext& ctx) {
                for (std::size_t k = 0; k < offsets.size(); ++k) {
                  if (!ctx.wants(k)) continue;
                  ctx.accumulate(k, ctx.grad().middleRows(offsets[k], ctx.input(k).rows()));
                }
              });
}

Var concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no operands");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: row counts differ");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Eigen::Index> offsets;
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    offsets.push_back(c);
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return tape_of(parts.front())
      .record("concat_cols", std::move(out), std::vector<Var>(parts.begin(), parts.end()),
              [offsets](BackwardContext& ctx) {
                for (std::size_t k = 0; k < offsets.size(); ++k) {
                  if (!ctx.wants(k)) continue;
                  ctx.accumulate(k, ctx.grad().middleCols(offsets[k], ctx.input(k).cols()));
                }
              });
}

Var broadcast_to(Var a, Eigen::Index rows, Eigen::Index cols) {
  const Matrix& x = a.value();
  if ((x.rows() != rows && x.rows() != 1) || (x.cols() != cols && x.cols() != 1)) {
    throw ShapeError("broadcast_to: cannot broadcast " + shape_str(x) + " to " +
                     std::to_string(rows) + "x" + std::to_string(cols));
  }
  Matrix out = expand(x, rows, cols);
  return tape_of(a).record("broadcast_to", std::move(out), {a}, [](BackwardContext& ctx) {
    ctx.accumulate(0, reduce_to(ctx.grad(), ctx.input(0).rows(), ctx.input(0).cols()));
  });
}

Var squared_distance(Var a, Var b) {
  const Matrix& av = a.value();
  const Matrix& bv = b.value();
  if (av.cols() != bv.cols()) {
    throw ShapeError("squared_distance: feature dimensions differ (" + shape_str(av) + " vs " +
                     shape_str(bv) + ")");
  }
  Matrix out(av.rows(), bv.rows());
  for (Eigen::Index i = 0; i < av.rows(); ++i) {
    for (Eigen::Index j = 0; j < bv.rows(); ++j) {
      out(i, j) = (av.row(i) - bv.row(j)).squaredNorm();
    }
  }
  return tape_of(a).record("squared_distance", std::move(out), {a, b}, [](BackwardContext& ctx) {
    const Matrix& x = ctx.input(0);
    const Matrix& y = ctx.input(1);
    const Matrix& g = ctx.grad();
    if (ctx.wants(0)) {
      Matrix gx = 2.0 * (g.rowwise().sum().asDiagonal() * x - g * y);
      ctx.accumulate(0, gx);
    }
    if (ctx.wants(1)) {
      Matrix gy = 2.0 * (g.colwise().sum().transpose().asDiagonal() * y - g.transpose() * x);
      ctx.accumulate(1, gy);
    }
  });
}

Var cholesky(Var a) {
  Matrix out = cholesky_lower(a.value());
  return tape_of(a).record("cholesky", std::move(out), {a}, [](BackwardContext& ctx) {
    // Abar = sym(L^-T Phi(L^T Lbar) L^-1), Phi = lower triangle with halved diagonal.
    const Matrix& l = ctx.output();
    Matrix lbar = ctx.grad().triangularView<Eigen::Lower>();
    Matrix p = (l.transpose() * lbar).triangularView<Eigen::Lower>();
    p.diagonal() *= 0.5;
    // S = L^-T P L^-1
    Matrix s = l.transpose().triangularView<Eigen::Upper>().solve(p);
    s = l.transpose().triangularView<Eigen::Upper>().solve(s.transpose()).transpose().eval();
    Matrix sym = 0.5 * (s + s.transpose());
    ctx.accumulate(0, sym);
  });
}

Var solve_lower(Var l, Var b) {
  const Matrix& lv = l.value();
  const Matrix& bv = b.value();
  if (lv.rows() != lv.cols() || lv.rows() != bv.rows()) {
    throw ShapeError("solve_lower: " + shape_str(lv) + " against " + shape_str(bv));
  }
  Matrix out = lv.triangularView<Eigen::Lower>().solve(bv);
  return tape_of(l).record("solve_lower", std::move(out), {l, b}, [](BackwardContext& ctx) {
    const Matrix& lv = ctx.input(0);
    const Matrix& x = ctx.output();
    const Matrix bbar = lv.transpose().triangularView<Eigen::Upper>().solve(ctx.grad());
    if (ctx.wants(0)) {
      Matrix lbar = -(bbar * x.transpose());
      ctx.accumulate(0, Matrix(lbar.triangularView<Eigen::Lower>()));
    }
    if (ctx.wants(1)) ctx.accumulate(1, bbar);
  });
}

Var solve_lower_transposed(Var l, Var b) {
  const Matrix& lv = l.value();
  const Matrix& bv = b.value();
  if (lv.rows() != lv.cols() || lv.rows() != bv.rows()) {
    throw ShapeError("solve_lower_transposed: " + shape_str(lv) + " against " + shape_str(bv));
  }
  Matrix out = lv.transpose().triangularView<Eigen::Upper>().solve(bv);
  return tape_of(l).record("solve_lower_transposed", std::move(out), {l, b}, [](BackwardContext& ctx) {
    const Matrix& lv = ctx.input(0);
    const Matrix& x = ctx.output();
    const Matrix bbar = lv.triangularView<Eigen::Lower>().solve(ctx.grad());
    if (ctx.wants(0)) {
      Matrix lbar = -(x * bbar.transpose());
      ctx.accumulate(0, Matrix(lbar.triangularView<Eigen::Lower>()));
    }
    if (ctx.wants(1)) ctx.accumulate(1, bbar);
  });
}

Var logdet_from_cholesky(Var l) {
  const Matrix& lv = l.value();
  if (lv.rows() != lv.cols()) throw ShapeError("logdet_from_cholesky: " + shape_str(lv) + " is not square");
  if ((lv.diagonal().array() <= 0.0).any()) {
    throw NumericalError("logdet_from_cholesky: factor has a non-positive diagonal");
  }
  Matrix out(1, 1);
  out(0, 0) = 2.0 * lv.diagonal().array().log().sum();
  return tape_of(l).record("logdet_from_cholesky", std::move(out), {l}, [](BackwardContext& ctx) {
    const Matrix& lv = ctx.input(0);
    Matrix g = Matrix::Zero(lv.rows(), lv.cols());
    g.diagonal() = 2.0 * ctx.grad()(0, 0) * lv.diagonal().cwiseInverse();
    ctx.accumulate(0, g);
  });
}

Var tril(Var a, bool strict) {
  auto mask = [strict](const Matrix& x) -> Matrix {
    Matrix r = x.triangularView<Eigen::Lower>();
    if (strict) r.diagonal().setZero();
    return r;
  };
  return unary("tril", a, mask, [mask](const Matrix&, const Matrix&, const Matrix& g) { return mask(g); });
}

Var diag_part(Var a) {
  const Matrix& x = a.value();
  if (x.rows() != x.cols()) throw ShapeError("diag_part: " + shape_str(x) + " is not square");
  Matrix out = x.diagonal();
  return tape_of(a).record("diag_part", std::move(out), {a}, [](BackwardContext& ctx) {
    const Eigen::Index n = ctx.input(0).rows();
    Matrix g = Matrix::Zero(n, n);
    g.diagonal() = ctx.grad().col(0);
    ctx.accumulate(0, g);
  });
}

Var diag_embed(Var v) {
  const Matrix& x = v.value();
  if (x.cols() != 1) throw ShapeError("diag_embed: expected a column, got " + shape_str(x));
  Matrix out = Matrix::Zero(x.rows(), x.rows());
  out.diagonal() = x.col(0);
  return tape_of(v).record("diag_embed", std::move(out), {v}, [](BackwardContext& ctx) {
    ctx.accumulate(0, Matrix(ctx.grad().diagonal()));
  });
}

Var add_diag(Var a, double eps) {
  if (a.rows() != a.cols()) throw ShapeError("add_diag: " + shape_str(a.value()) + " is not square");
  return unary("add_diag", a,
               [eps](const Matrix& x) -> Matrix {
                 Matrix r = x;
                 r.diagonal().array() += eps;
                 return r;
               },
               [](const Matrix&, const Matrix&, const Matrix& g) -> Matrix { return g; });
}

Var dropout(Var a, double rate, std::mt19937_64* rng) {
  if (rate <= 0.0 || rng == nullptr) return a;
  if (rate >= 1.0) throw Error("dropout rate must be below 1");
  std::bernoulli_distribution keep(1.0 - rate);
  Matrix mask(a.rows(), a.cols());
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(*rng) ? 1.0 / (1.0 - rate) : 0.0;
  return mul(a, tape_of(a).constant(std::move(mask)));
}

}  // namespace trajgp::ad
