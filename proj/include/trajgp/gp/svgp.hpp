#pragma once

#include "trajgp/autodiff/optimizer.hpp"
#include "trajgp/gp/kernel.hpp"
#include "trajgp/linalg.hpp"

#include <map>
#include <string>
#include <vector>

namespace trajgp {

/// Sparse variational GP: inducing inputs Z, q(u) = N(m_v, L_v L_vᵀ),
/// kernel and likelihood hyperparameters and a constant prior mean.
struct SvgpState {
  Matrix inducing;  // M x m
  Vector var_mean;  // M
  Matrix var_chol;  // M x M, lower triangular with positive diagonal
  KernelParams kernel;
  double noise = 0.1;
  double mean = 0.0;
  JitterPolicy jitter;

  Eigen::Index num_inducing() const noexcept { return inducing.rows(); }
  Eigen::Index input_dim() const noexcept { return inducing.cols(); }
  void validate() const;
};

namespace gp_param {
inline constexpr const char* inducing = "gp.inducing";
inline constexpr const char* var_mean = "gp.var_mean";
inline constexpr const char* var_chol_raw = "gp.var_chol_raw";
inline constexpr const char* lengthscale_raw = "gp.lengthscale_raw";
inline constexpr const char* outputscale_raw = "gp.outputscale_raw";
inline constexpr const char* noise_raw = "gp.noise_raw";
inline constexpr const char* mean = "gp.mean";
}  // namespace gp_param

/// Writes the unconstrained "gp.*" parameterization of `state` into `params`.
/// Positive quantities go through inverse softplus; the variational factor
/// keeps its strict lower triangle and stores inverse-softplus diagonals.
void store_state(const SvgpState& state, ad::ParamStore& params);
SvgpState load_state(const ad::ParamStore& params, const JitterPolicy& jitter = {});

/// Prior-matched initial state: Z from k-means over `latents`, mean at the
/// target mean, lengthscale sqrt(m), outputscale 1, noise 0.1 var(y),
/// q(u) equal to the prior.
SvgpState init_svgp(const Matrix& latents, const Vector& targets, Eigen::Index num_inducing,
                    std::uint64_t seed, const JitterPolicy& jitter = {});

struct ElboTerms {
  ad::Var elbo;
  ad::Var expected_log_lik;  // already scaled by N / b
  ad::Var kl;
};

/// Mini-batch ELBO over latents H (b x m) with targets y, for a dataset of
/// `dataset_size` samples. `vars` holds the bound "gp.*" parameters.
ElboTerms elbo_terms(ad::Tape& tape, const std::map<std::string, ad::Var>& vars, ad::Var latents,
                     const Vector& targets, double dataset_size, const JitterPolicy& jitter = {});

double elbo(const SvgpState& state, const Matrix& latents, const Vector& targets, double dataset_size);
double kl_divergence(const SvgpState& state);

GaussianPrediction svgp_predict(const SvgpState& state, const Matrix& latents);

struct SvgpFitConfig {
  Eigen::Index num_inducing = 128;
  int epochs = 200;
  Eigen::Index batch_size = 32;
  double learning_rate = 1e-2;
  std::uint64_t seed = 0;
  bool train_inducing = true;
  JitterPolicy jitter;
};

struct SvgpFit {
  SvgpState state;
  std::vector<double> epoch_elbo;  // full-data ELBO after each epoch
};

/// SVGP on fixed inputs (no feature extractor), trained with Adam on
/// mini-batches. Starts from `init` when given, otherwise from init_svgp.
SvgpFit fit_svgp(const Matrix& inputs, const Vector& targets, const SvgpFitConfig& config,
                 const SvgpState* init = nullptr);

}  // namespace trajgp
