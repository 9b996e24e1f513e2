#include "trajgp/gp/svgp.hpp"

#include "trajgp/kmeans.hpp"

#include <algorithm>
#include <numbers>
#include <numeric>
#include <random>

namespace trajgp {

using ad::Var;

void SvgpState::validate() const {
  const Eigen::Index m = inducing.rows();
  if (m < 1) throw ShapeError("svgp: at least one inducing point is required");
  if (var_mean.size() != m || var_chol.rows() != m || var_chol.cols() != m) {
    throw ShapeError("svgp: variational parameters do not match " + std::to_string(m) + " inducing points");
  }
  if ((var_chol.diagonal().array() <= 0.0).any()) {
    throw NumericalError("svgp: variational Cholesky factor needs a positive diagonal");
  }
  if (!(kernel.lengthscale > 0.0) || !(kernel.outputscale > 0.0) || !(noise > 0.0)) {
    throw NumericalError("svgp: lengthscale, outputscale and noise must be positive");
  }
  if (!inducing.allFinite() || !var_mean.allFinite() || !var_chol.allFinite() || !std::isfinite(mean)) {
    throw NumericalError("svgp: non-finite state");
  }
}

void store_state(const SvgpState& state, ad::ParamStore& params) {
  state.validate();
  const Eigen::Index m = state.num_inducing();
  params[gp_param::inducing] = state.inducing;
  params[gp_param::var_mean] = state.var_mean;
  Matrix raw = state.var_chol.triangularView<Eigen::StrictlyLower>();
  for (Eigen::Index i = 0; i < m; ++i) raw(i, i) = inverse_softplus(state.var_chol(i, i));
  params[gp_param::var_chol_raw] = raw;
  params[gp_param::lengthscale_raw] = Matrix::Constant(1, 1, inverse_softplus(state.kernel.lengthscale));
  params[gp_param::outputscale_raw] = Matrix::Constant(1, 1, inverse_softplus(state.kernel.outputscale));
  params[gp_param::noise_raw] = Matrix::Constant(1, 1, inverse_softplus(state.noise));
  params[gp_param::mean] = Matrix::Constant(1, 1, state.mean);
}

SvgpState load_state(const ad::ParamStore& params, const JitterPolicy& jitter) {
  auto get = [&](const char* name) -> const Matrix& {
    auto it = params.find(name);
    if (it == params.end()) throw Error(std::string("svgp parameter '") + name + "' is missing");
    return it->second;
  };
  SvgpState s;
  s.inducing = get(gp_param::inducing);
  s.var_mean = get(gp_param::var_mean).col(0);
  const Matrix& raw = get(gp_param::var_chol_raw);
  s.var_chol = raw.triangularView<Eigen::StrictlyLower>();
  for (Eigen::Index i = 0; i < raw.rows(); ++i) s.var_chol(i, i) = softplus(raw(i, i));
  s.kernel.lengthscale = softplus(get(gp_param::lengthscale_raw)(0, 0));
  s.kernel.outputscale = softplus(get(gp_param::outputscale_raw)(0, 0));
  s.noise = softplus(get(gp_param::noise_raw)(0, 0));
  s.mean = get(gp_param::mean)(0, 0);
  s.jitter = jitter;
  s.validate();
  return s;
}

SvgpState init_svgp(const Matrix& latents, const Vector& targets, Eigen::Index num_inducing, std::uint64_t seed,
                    const JitterPolicy& jitter) {
  if (latents.rows() == 0 || latents.rows() != targets.size()) {
    throw ShapeError("init_svgp: need matching, non-empty latents and targets");
  }
  if (num_inducing < 1) throw ConfigError("num_inducing must be at least 1");
  SvgpState s;
  s.jitter = jitter;
  const Eigen::Index m = latents.cols();
  const Eigen::Index k = std::min<Eigen::Index>(num_inducing, latents.rows());
  s.inducing.resize(num_inducing, m);
  s.inducing.topRows(k) = kmeans(latents, static_cast<int>(k), derive_seed(seed, "svgp.kmeans")).centers;
  if (k < num_inducing) {
    // Fewer samples than inducing points: perturbed copies fill the rest.
    std::mt19937_64 rng(derive_seed(seed, "svgp.pad"));
    std::normal_distribution<double> g(0.0, 0.1);
    for (Eigen::Index i = k; i < num_inducing; ++i) {
      s.inducing.row(i) = latents.row(i % latents.rows());
      for (Eigen::Index j = 0; j < m; ++j) s.inducing(i, j) += g(rng);
    }
  }
  s.mean = targets.mean();
  const double var = targets.size() > 1 ? (targets.array() - s.mean).square().sum() / double(targets.size() - 1) : 0.0;
  s.noise = std::max(0.1 * var, 1e-6);
  s.kernel.lengthscale = std::sqrt(static_cast<double>(m));
  s.kernel.outputscale = 1.0;
  s.var_mean = Vector::Constant(num_inducing, s.mean);
  s.var_chol = cholesky_with_jitter(kernel_matrix(s.kernel, s.inducing, s.inducing), jitter).factor;
  return s;
}

ElboTerms elbo_terms(ad::Tape& tape, const std::map<std::string, Var>& vars, Var latents, const Vector& targets,
                     double dataset_size, const JitterPolicy& jitter) {
  auto get = [&](const char* name) -> const Var& {
    auto it = vars.find(name);
    if (it == vars.end()) throw Error(std::string("svgp parameter '") + name + "' is not bound");
    return it->second;
  };
  const Eigen::Index b = latents.rows();
  if (b < 1) throw ShapeError("elbo: empty batch");
  if (targets.size() != b) throw ShapeError("elbo: batch has " + std::to_string(b) + " latents but " +
                                            std::to_string(targets.size()) + " targets");
  if (dataset_size < static_cast<double>(b)) throw ConfigError("elbo: dataset size is smaller than the batch");

  const Var& z = get(gp_param::inducing);
  const Eigen::Index m = z.rows();
  Var lengthscale = ad::softplus(get(gp_param::lengthscale_raw));
  Var outputscale = ad::softplus(get(gp_param::outputscale_raw));
  Var noise = ad::softplus(get(gp_param::noise_raw));
  const Var& mu0 = get(gp_param::mean);
  const Var& raw = get(gp_param::var_chol_raw);

  Var kzz = kernel_matrix(lengthscale, outputscale, z, z);
  const double eps = cholesky_with_jitter(kzz.value(), jitter).jitter;
  Var lz = ad::cholesky(ad::add_diag(kzz, eps));
  Var kzx = kernel_matrix(lengthscale, outputscale, z, latents);
  Var a = ad::solve_lower(lz, kzx);
  Var proj = ad::solve_lower_transposed(lz, a);  // Kzz^-1 Kzx
  Var lv = ad::add(ad::tril(raw, true), ad::diag_embed(ad::softplus(ad::diag_part(raw))));
  Var delta = ad::sub(get(gp_param::var_mean), mu0);

  Var mu = ad::add(mu0, ad::matmul(ad::transpose(proj), delta));
  Var c = ad::matmul(ad::transpose(lv), proj);
  Var v = ad::transpose(ad::add(ad::sub(ad::broadcast_to(outputscale, 1, b), ad::sum_rows(ad::square(a))),
                                ad::sum_rows(ad::square(c))));
  Var resid = ad::sub(tape.constant(Matrix(targets)), mu);
  Var quad = ad::sum(ad::div(ad::add(ad::square(resid), v), ad::scale(noise, 2.0)));
  const double bd = static_cast<double>(b);
  Var log_norm = ad::add_scalar(ad::scale(ad::log(noise), -0.5 * bd), -0.5 * bd * std::log(2.0 * std::numbers::pi));
  Var ell = ad::scale(ad::sub(log_norm, quad), dataset_size / bd);

  Var trace = ad::sum(ad::square(ad::solve_lower(lz, lv)));
  Var maha = ad::sum(ad::square(ad::solve_lower(lz, delta)));
  Var kl = ad::scale(ad::add_scalar(ad::add(ad::add(trace, maha), ad::sub(ad::logdet_from_cholesky(lz),
                                                                              ad::logdet_from_cholesky(lv))),
                                    -static_cast<double>(m)),
                     0.5);
  return {ad::sub(ell, kl), ell, kl};
}

double elbo(const SvgpState& state, const Matrix& latents, const Vector& targets, double dataset_size) {
  ad::ParamStore params;
  store_state(state, params);
  ad::Tape tape(false);
  auto vars = ad::bind_params(tape, params);
  return elbo_terms(tape, vars, tape.constant(latents), targets, dataset_size, state.jitter).elbo.item();
}

double kl_divergence(const SvgpState& state) {
  state.validate();
  const Eigen::Index m = state.num_inducing();
  const Eigen::MatrixXd lz = cholesky_with_jitter(kernel_matrix(state.kernel, state.inducing, state.inducing),
                                                  state.jitter).factor;
  const Eigen::MatrixXd lv = state.var_chol;
  const Eigen::MatrixXd w = lz.triangularView<Eigen::Lower>().solve(lv);
  const Eigen::VectorXd d = lz.triangularView<Eigen::Lower>().solve(
      (state.var_mean.array() - state.mean).matrix());
  return 0.5 * (w.squaredNorm() + d.squaredNorm() - static_cast<double>(m) + logdet_from_cholesky(lz) -
                logdet_from_cholesky(lv));
}

GaussianPrediction svgp_predict(const SvgpState& state, const Matrix& latents) {
  state.validate();
  if (latents.cols() != state.input_dim()) {
    throw ShapeError("svgp_predict: latents have " + std::to_string(latents.cols()) + " columns, expected " +
                     std::to_string(state.input_dim()));
  }
  const Eigen::MatrixXd lz = cholesky_with_jitter(kernel_matrix(state.kernel, state.inducing, state.inducing),
                                                  state.jitter).factor;
  const Eigen::MatrixXd kzx = kernel_matrix(state.kernel, state.inducing, latents);
  const Eigen::MatrixXd a = lz.triangularView<Eigen::Lower>().solve(kzx);
  const Eigen::MatrixXd proj = lz.transpose().triangularView<Eigen::Upper>().solve(a);
  const Eigen::MatrixXd c = Eigen::MatrixXd(state.var_chol).transpose() * proj;
  GaussianPrediction out;
  out.mean = (proj.transpose() * (state.var_mean.array() - state.mean).matrix()).array() + state.mean;
  Vector v = (state.kernel.outputscale - a.colwise().squaredNorm().array() + c.colwise().squaredNorm().array())
                 .transpose();
  // Cancellation can push the latent variance a hair below zero.
  out.latent_variance = v.cwiseMax(1e-15 * state.kernel.outputscale);
  out.variance = out.latent_variance.array() + state.noise;
  return out;
}

SvgpFit fit_svgp(const Matrix& inputs, const Vector& targets, const SvgpFitConfig& config, const SvgpState* init) {
  if (inputs.rows() != targets.size() || inputs.rows() == 0) {
    throw ShapeError("fit_svgp: need matching, non-empty inputs and targets");
  }
  if (config.batch_size < 1 || config.epochs < 0) throw ConfigError("fit_svgp: invalid batch size or epochs");
  SvgpFit fit;
  fit.state = init ? *init : init_svgp(inputs, targets, config.num_inducing, config.seed, config.jitter);
  ad::ParamStore params;
  store_state(fit.state, params);
  ad::AdamState adam;
  ad::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  const Eigen::Index n = inputs.rows();
  const double nd = static_cast<double>(n);
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::mt19937_64 rng(derive_seed(config.seed, "svgp.shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min(config.batch_size, n - start);
      Matrix xb(len, inputs.cols());
      Vector yb(len);
      for (Eigen::Index i = 0; i < len; ++i) {
        xb.row(i) = inputs.row(order[start + i]);
        yb(i) = targets(order[start + i]);
      }
      ad::Tape tape;
      auto vars = ad::bind_params(tape, params);
      ElboTerms terms = elbo_terms(tape, vars, tape.constant(xb), yb, nd, config.jitter);
      ad::Gradients grads = tape.backward(ad::scale(terms.elbo, -1.0 / nd));
      if (!config.train_inducing) grads.erase(gp_param::inducing);
      ad::adam_step(params, grads, adam, adam_cfg);
    }
    fit.state = load_state(params, config.jitter);
    fit.epoch_elbo.push_back(elbo(fit.state, inputs, targets, nd));
  }
  return fit;
}

}  // namespace trajgp
