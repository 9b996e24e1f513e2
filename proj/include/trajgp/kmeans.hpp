#pragma once

#include "trajgp/common.hpp"

#include <cstdint>
#include <vector>

namespace trajgp {

struct KMeansResult {
  Matrix centers;  // k x m
  std::vector<int> labels;
  double inertia = 0.0;
  int iterations = 0;
  /// Objective after each assignment step.
  std::vector<double> inertia_history;
};

/// Lloyd's algorithm from k-means++ seeding. `restarts` independent seedings
/// are tried and the lowest-inertia solution kept. Iteration stops when no
/// label changes or, with `tol` > 0, when no center moves more than `tol`.
/// Requires 1 <= k <= n.
KMeansResult kmeans(const Matrix& points, int k, std::uint64_t seed, int max_iter = 300, int restarts = 1,
                    double tol = 0.0);

}  // namespace trajgp
