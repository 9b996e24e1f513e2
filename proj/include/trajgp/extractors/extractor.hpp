#pragma once

#include "trajgp/autodiff/ops.hpp"
#include "trajgp/autodiff/optimizer.hpp"

#include <cstdint>
#include <map>
#include <random>
#include <string>

namespace trajgp {

enum class Architecture { rnn, gru, lstm, transformer };

std::string to_string(Architecture arch);
/// Throws ConfigError for names outside {rnn, gru, lstm, transformer}.
Architecture parse_architecture(const std::string& name);

struct ExtractorConfig {
  Architecture arch = Architecture::transformer;
  Eigen::Index input_dim = 0;
  /// Hidden size of recurrent layers, model dimension of the transformer.
  Eigen::Index hidden_dim = 512;
  int num_layers = 6;
  int num_heads = 32;  // transformer only
  Eigen::Index feedforward_dim = 2048;  // transformer only
  Eigen::Index decoder_dim = 256;
  Eigen::Index latent_dim = 2;
  double dropout = 0.1;

  /// Throws ConfigError naming the offending keys.
  void validate() const;
};

/// Grid-search optimum for one architecture: extractor shape plus the GP and
/// optimizer settings it was tuned with.
struct TunedDefaults {
  ExtractorConfig extractor;
  int num_inducing = 128;
  int batch_size = 32;
  double learning_rate = 1e-4;
};

TunedDefaults tuned_defaults(Architecture arch);

using ParamVars = std::map<std::string, ad::Var>;

/// Sequence-to-vector feature extractor h(x_1:t) = dec(enc(x_1:t)).
///
/// Recurrent encoders consume records in temporal order and hand their final
/// hidden state to the decoder. The transformer encoder runs full
/// self-attention over the prefix and mean-pools positions. All decoders are
/// a two-layer MLP (decoder_dim hidden units, latent_dim outputs).
class Extractor {
 public:
  explicit Extractor(ExtractorConfig config);

  const ExtractorConfig& config() const noexcept { return config_; }

  /// Adds freshly initialized "ext.*" parameters to `params`.
  void init_params(ad::ParamStore& params, std::uint64_t seed) const;

  /// Latent (1 x latent_dim) for the rows of `seq`, which must be non-empty.
  /// Dropout is active only when `dropout_rng` is non-null.
  ad::Var encode(ad::Tape& tape, const ParamVars& vars, const Matrix& seq,
                 std::mt19937_64* dropout_rng = nullptr) const;

  /// Evaluation-mode latents for every prefix length t = 1..T (row t-1).
  /// Prefixes longer than `max_prefix` keep their most recent records.
  Matrix encode_all_prefixes(const ad::ParamStore& params, const Matrix& seq, int max_prefix) const;

 private:
  ad::Var encode_recurrent(ad::Tape& tape, const ParamVars& vars, ad::Var x, std::mt19937_64* rng) const;
  ad::Var encode_transformer(ad::Tape& tape, const ParamVars& vars, ad::Var x, std::mt19937_64* rng) const;
  ad::Var decode(const ParamVars& vars, ad::Var pooled, std::mt19937_64* rng) const;

  ExtractorConfig config_;
};

/// Linear head w^T h + b of the maximum-likelihood baseline ("mle.w", "mle.b").
void init_mle_head(ad::ParamStore& params, Eigen::Index latent_dim);
ad::Var mle_head(const ParamVars& vars, ad::Var latents);
double mle_head(const ad::ParamStore& params, const Eigen::Ref<const Vector>& latent);

}  // namespace trajgp
