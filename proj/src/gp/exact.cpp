#include "trajgp/gp/exact.hpp"

#include <numbers>

namespace trajgp {

ad::Var kernel_matrix(ad::Var lengthscale, ad::Var outputscale, ad::Var a, ad::Var b) {
  ad::Var denom = ad::scale(ad::square(lengthscale), 2.0);
  return ad::mul(outputscale, ad::exp(ad::neg(ad::div(ad::squared_distance(a, b), denom))));
}

void ExactGpModel::validate() const {
  if (inputs.rows() != targets.size()) {
    throw ShapeError("exact GP: " + std::to_string(inputs.rows()) + " inputs but " +
                     std::to_string(targets.size()) + " targets");
  }
  if (!(noise > 0.0)) throw NumericalError("exact GP: noise variance must be positive");
  if (!targets.allFinite() || !std::isfinite(mean)) throw NumericalError("exact GP: non-finite targets");
}

namespace {

JitteredCholesky<double> factor_gram(const ExactGpModel& model) {
  Eigen::MatrixXd lambda = kernel_matrix(model.kernel, model.inputs, model.inputs);
  lambda.diagonal().array() += model.noise;
  return cholesky_with_jitter(lambda, model.jitter);
}

}  // namespace

GaussianPrediction exact_gp_posterior(const ExactGpModel& model, const Matrix& queries) {
  model.validate();
  const Eigen::Index q = queries.rows();
  GaussianPrediction out;
  out.mean = Vector::Constant(q, model.mean);
  out.latent_variance = Vector::Constant(q, model.kernel.outputscale);
  if (model.inputs.rows() > 0) {
    const auto chol = factor_gram(model);
    const Eigen::MatrixXd kxq = kernel_matrix(model.kernel, model.inputs, queries);
    const Eigen::VectorXd alpha = cholesky_solve(chol.factor, (model.targets.array() - model.mean).matrix());
    out.mean.array() += (kxq.transpose() * alpha).array();
    const Eigen::MatrixXd v = chol.factor.triangularView<Eigen::Lower>().solve(kxq);
    out.latent_variance.array() -= v.colwise().squaredNorm().transpose().array();
  }
  out.latent_variance = out.latent_variance.cwiseMax(0.0);
  out.variance = out.latent_variance.array() + model.noise;
  return out;
}

double log_marginal_likelihood(const ExactGpModel& model) {
  model.validate();
  const Eigen::Index n = model.inputs.rows();
  if (n == 0) return 0.0;
  const auto chol = factor_gram(model);
  const Eigen::VectorXd centered = model.targets.array() - model.mean;
  const Eigen::VectorXd w = chol.factor.triangularView<Eigen::Lower>().solve(centered);
  return -0.5 * w.squaredNorm() - 0.5 * logdet_from_cholesky(chol.factor) -
         0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
}

}  // namespace trajgp
