#pragma once

#include "trajgp/gp/kernel.hpp"
#include "trajgp/linalg.hpp"

namespace trajgp {

/// Full-rank GP regression with a constant mean. Used as the reference the
/// sparse model is checked against.
struct ExactGpModel {
  Matrix inputs;  // n x m
  Vector targets;
  KernelParams kernel;
  double noise = 1.0;
  double mean = 0.0;
  /// Jitter only kicks in when K + noise*I fails to factorize.
  JitterPolicy jitter{0.0, 10.0, 1e-2};

  void validate() const;
};

/// Posterior predictive at the rows of `queries`. With no training data the
/// prior (mean, outputscale) is returned.
GaussianPrediction exact_gp_posterior(const ExactGpModel& model, const Matrix& queries);

/// log N(y | mean*1, K + noise*I).
double log_marginal_likelihood(const ExactGpModel& model);

}  // namespace trajgp
