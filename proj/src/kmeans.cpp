#include "trajgp/kmeans.hpp"

#include <limits>
#include <random>

namespace trajgp {

namespace {

Matrix seed_plus_plus(const Matrix& x, int k, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix centers(k, x.cols());
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  centers.row(0) = x.row(pick(rng));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (x.row(i) - centers.row(0)).squaredNorm();
  for (int c = 1; c < k; ++c) {
    const double total = d2.sum();
    Eigen::Index chosen = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double r = u(rng);
      for (chosen = 0; chosen < n - 1; ++chosen) {
        r -= d2(chosen);
        if (r < 0.0) break;
      }
    } else {
      chosen = pick(rng);
    }
    centers.row(c) = x.row(chosen);
    for (Eigen::Index i = 0; i < n; ++i) d2(i) = std::min(d2(i), (x.row(i) - centers.row(c)).squaredNorm());
  }
  return centers;
}

KMeansResult lloyd(const Matrix& x, Matrix centers, int max_iter, double tol) {
  const Eigen::Index n = x.rows();
  const int k = static_cast<int>(centers.rows());
  KMeansResult res;
  res.labels.assign(static_cast<std::size_t>(n), -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    Vector best(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      int arg = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        const double d = (x.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          arg = c;
        }
      }
      best(i) = bd;
      if (res.labels[i] != arg) {
        res.labels[i] = arg;
        changed = true;
      }
    }
    res.iterations = it + 1;
    res.inertia_history.push_back(best.sum());
    const Matrix previous = centers;
    Matrix sums = Matrix::Zero(k, x.cols());
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      sums.row(res.labels[i]) += x.row(i);
      ++counts[res.labels[i]];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / static_cast<double>(counts[c]);
      } else {
        // Empty cluster: move it onto the worst-served point.
        Eigen::Index far;
        best.maxCoeff(&far);
        centers.row(c) = x.row(far);
        best(far) = 0.0;
        changed = true;
      }
    }
    if (!changed) break;
    if (tol > 0.0 && (centers - previous).rowwise().norm().maxCoeff() <= tol) break;
  }
  res.inertia = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    int arg = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (int c = 0; c < k; ++c) {
      const double d = (x.row(i) - centers.row(c)).squaredNorm();
      if (d < bd) {
        bd = d;
        arg = c;
      }
    }
    res.labels[i] = arg;
    res.inertia += bd;
  }
  res.centers = std::move(centers);
  return res;
}

}  // namespace

KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter, int restarts, double tol) {
  if (k < 1 || k > points.rows()) {
    throw ConfigError("kmeans: k = " + std::to_string(k) + " must lie in [1, " + std::to_string(points.rows()) +
                      "]");
  }
  if (!points.allFinite()) throw NumericalError("kmeans: non-finite points");
  std::mt19937_64 rng(seed);
  KMeansResult best;
  for (int r = 0; r < std::max(1, restarts); ++r) {
    KMeansResult cur = lloyd(points, seed_plus_plus(points, k, rng), max_iter, tol);
    if (r == 0 || cur.inertia < best.inertia) best = std::move(cur);
  }
  return best;
}

}  // namespace trajgp
