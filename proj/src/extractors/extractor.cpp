#include "trajgp/extractors/extractor.hpp"

#include <cmath>
#include <vector>

namespace trajgp {

using ad::Var;

std::string to_string(Architecture arch) {
  switch (arch) {
    case Architecture::rnn: return "rnn";
    case Architecture::gru: return "gru";
    case Architecture::lstm: return "lstm";
    case Architecture::transformer: return "transformer";
  }
  return "unknown";
}

Architecture parse_architecture(const std::string& name) {
  if (name == "rnn") return Architecture::rnn;
  if (name == "gru") return Architecture::gru;
  if (name == "lstm") return Architecture::lstm;
  if (name == "transformer") return Architecture::transformer;
  throw ConfigError("extractor.arch: unknown architecture '" + name +
                    "' (expected rnn, gru, lstm or transformer)");
}

void ExtractorConfig::validate() const {
  auto positive = [](const char* key, long long v) {
    if (v <= 0) throw ConfigError(std::string("extractor.") + key + " must be positive, got " + std::to_string(v));
  };
  positive("input_dim", input_dim);
  positive("hidden_dim", hidden_dim);
  positive("num_layers", num_layers);
  positive("decoder_dim", decoder_dim);
  positive("latent_dim", latent_dim);
  if (latent_dim > decoder_dim) {
    throw ConfigError("extractor.latent_dim (" + std::to_string(latent_dim) + ") exceeds extractor.decoder_dim (" +
                      std::to_string(decoder_dim) + ")");
  }
  if (arch == Architecture::transformer) {
    positive("num_heads", num_heads);
    positive("feedforward_dim", feedforward_dim);
    if (hidden_dim % num_heads != 0) {
      throw ConfigError("extractor.hidden_dim (" + std::to_string(hidden_dim) +
                        ") is not divisible by extractor.num_heads (" + std::to_string(num_heads) + ")");
    }
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw ConfigError("extractor.dropout must lie in [0, 1), got " + std::to_string(dropout));
  }
}

TunedDefaults tuned_defaults(Architecture arch) {
  TunedDefaults d;
  d.extractor.arch = arch;
  d.num_inducing = 128;
  d.batch_size = 32;
  d.extractor.hidden_dim = 512;
  switch (arch) {
    case Architecture::rnn:
      d.extractor.num_layers = 3;
      d.extractor.decoder_dim = 128;
      d.extractor.latent_dim = 2;
      d.learning_rate = 5e-5;
      break;
    case Architecture::gru:
      d.extractor.num_layers = 3;
      d.extractor.decoder_dim = 128;
      d.extractor.latent_dim = 4;
      d.learning_rate = 2e-4;
      break;
    case Architecture::lstm:
      d.extractor.num_layers = 4;
      d.extractor.decoder_dim = 128;
      d.extractor.latent_dim = 3;
      d.learning_rate = 5e-5;
      break;
    case Architecture::transformer:
      d.extractor.num_heads = 32;
      d.extractor.feedforward_dim = 2048;
      d.extractor.num_layers = 6;
      d.extractor.decoder_dim = 256;
      d.extractor.latent_dim = 2;
      d.learning_rate = 1e-4;
      break;
  }
  return d;
}

namespace {

const Var& get(const ParamVars& vars, const std::string& name) {
  auto it = vars.find(name);
  if (it == vars.end()) throw Error("extractor parameter '" + name + "' is missing");
  return it->second;
}

Var linear(const ParamVars& vars, const std::string& prefix, Var x) {
  return add(matmul(x, get(vars, prefix + ".W")), get(vars, prefix + ".b"));
}

Var affine_norm(const ParamVars& vars, const std::string& prefix, Var x) {
  return add(mul(layer_norm_rows(x), get(vars, prefix + ".gain")), get(vars, prefix + ".bias"));
}

Matrix uniform_fan_in(Eigen::Index in, Eigen::Index out, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> u(-bound, bound);
  Matrix w(in, out);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
  return w;
}

Matrix orthogonal(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix makes the draw uniform over the orthogonal group.
  for (Eigen::Index j = 0; j < n; ++j) {
    if (qr.matrixQR()(j, j) < 0) q.col(j) *= -1.0;
  }
  return q;
}

void add_linear(ad::ParamStore& p, const std::string& prefix, Eigen::Index in, Eigen::Index out,
                std::mt19937_64& rng) {
  p[prefix + ".W"] = uniform_fan_in(in, out, rng);
  p[prefix + ".b"] = Matrix::Zero(1, out);
}

void add_norm(ad::ParamStore& p, const std::string& prefix, Eigen::Index dim) {
  p[prefix + ".gain"] = Matrix::Ones(1, dim);
  p[prefix + ".bias"] = Matrix::Zero(1, dim);
}

int gate_count(Architecture arch) {
  switch (arch) {
    case Architecture::gru: return 3;
    case Architecture::lstm: return 4;
    default: return 1;
  }
}

}  // namespace

Extractor::Extractor(ExtractorConfig config) : config_(config) { config_.validate(); }

void Extractor::init_params(ad::ParamStore& params, std::uint64_t seed) const {
  std::mt19937_64 rng(seed);
  const Eigen::Index h = config_.hidden_dim;
  if (config_.arch == Architecture::transformer) {
    add_linear(params, "ext.in", config_.input_dim, h, rng);
    for (int l = 0; l < config_.num_layers; ++l) {
      const std::string p = "ext.l" + std::to_string(l);
      add_norm(params, p + ".norm1", h);
      add_linear(params, p + ".q", h, h, rng);
      add_linear(params, p + ".k", h, h, rng);
      add_linear(params, p + ".v", h, h, rng);
      add_linear(params, p + ".o", h, h, rng);
      add_norm(params, p + ".norm2", h);
      add_linear(params, p + ".ff1", h, config_.feedforward_dim, rng);
      add_linear(params, p + ".ff2", config_.feedforward_dim, h, rng);
    }
    add_norm(params, "ext.norm", h);
  } else {
    const int gates = gate_count(config_.arch);
    for (int l = 0; l < config_.num_layers; ++l) {
      const std::string p = "ext.l" + std::to_string(l);
      const Eigen::Index in = l == 0 ? config_.input_dim : h;
      params[p + ".Wx"] = uniform_fan_in(in, gates * h, rng);
      Matrix wh(h, gates * h);
      for (int g = 0; g < gates; ++g) wh.middleCols(g * h, h) = orthogonal(h, rng);
      params[p + ".Wh"] = wh;
      Matrix b = Matrix::Zero(1, gates * h);
      if (config_.arch == Architecture::lstm) b.middleCols(h, h).setOnes();  // forget gate
      params[p + ".b"] = b;
      if (config_.arch == Architecture::gru) params[p + ".bh"] = Matrix::Zero(1, gates * h);
    }
  }
  add_linear(params, "ext.dec1", h, config_.decoder_dim, rng);
  add_linear(params, "ext.dec2", config_.decoder_dim, config_.latent_dim, rng);
}

Var Extractor::encode(ad::Tape& tape, const ParamVars& vars, const Matrix& seq,
                      std::mt19937_64* dropout_rng) const {
  if (seq.rows() == 0) throw ShapeError("encode: empty sequence (t = 0)");
  if (seq.cols() != config_.input_dim) {
    throw ShapeError("encode: records have " + std::to_string(seq.cols()) + " features, extractor expects " +
                     std::to_string(config_.input_dim));
  }
  if (!seq.allFinite()) throw NumericalError("encode: non-finite input features");
  Var x = tape.constant(seq);
  Var pooled = config_.arch == Architecture::transformer ? encode_transformer(tape, vars, x, dropout_rng)
                                                         : encode_recurrent(tape, vars, x, dropout_rng);
  return decode(vars, pooled, dropout_rng);
}

Var Extractor::decode(const ParamVars& vars, Var pooled, std::mt19937_64* rng) const {
  Var hidden = dropout(relu(linear(vars, "ext.dec1", pooled)), config_.dropout, rng);
  return linear(vars, "ext.dec2", hidden);
}

Var Extractor::encode_recurrent(ad::Tape& tape, const ParamVars& vars, Var x, std::mt19937_64* rng) const {
  const Eigen::Index h = config_.hidden_dim;
  const Eigen::Index steps = x.rows();
  Var layer_input = x;
  Var last;
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "ext.l" + std::to_string(l);
    const Var& wh = get(vars, p + ".Wh");
    Var xw = add(matmul(layer_input, get(vars, p + ".Wx")), get(vars, p + ".b"));
    Var state = tape.constant(Matrix::Zero(1, h));
    Var cell = tape.constant(Matrix::Zero(1, h));
    std::vector<Var> outputs;
    const bool keep_outputs = l + 1 < config_.num_layers;
    for (Eigen::Index s = 0; s < steps; ++s) {
      switch (config_.arch) {
        case Architecture::rnn:
          state = tanh(add(slice(xw, s, 1, 0, h), matmul(state, wh)));
          break;
        case Architecture::gru: {
          Var hw = add(matmul(state, wh), get(vars, p + ".bh"));
          Var r = sigmoid(add(slice(xw, s, 1, 0, h), slice(hw, 0, 1, 0, h)));
          Var z = sigmoid(add(slice(xw, s, 1, h, h), slice(hw, 0, 1, h, h)));
          Var n = tanh(add(slice(xw, s, 1, 2 * h, h), mul(r, slice(hw, 0, 1, 2 * h, h))));
          state = add(n, mul(z, sub(state, n)));
          break;
        }
        case Architecture::lstm: {
          Var gates = add(slice(xw, s, 1, 0, 4 * h), matmul(state, wh));
          Var i = sigmoid(slice(gates, 0, 1, 0, h));
          Var f = sigmoid(slice(gates, 0, 1, h, h));
          Var g = tanh(slice(gates, 0, 1, 2 * h, h));
          Var o = sigmoid(slice(gates, 0, 1, 3 * h, h));
          cell = add(mul(f, cell), mul(i, g));
          state = mul(o, tanh(cell));
          break;
        }
        case Architecture::transformer:
          throw Error("encode_recurrent called for a transformer");
      }
      if (keep_outputs) outputs.push_back(state);
    }
    last = state;
    if (keep_outputs) layer_input = dropout(concat_rows(outputs), config_.dropout, rng);
  }
  return dropout(last, config_.dropout, rng);
}

Var Extractor::encode_transformer(ad::Tape&, const ParamVars& vars, Var x, std::mt19937_64* rng) const {
  const Eigen::Index d = config_.hidden_dim;
  const Eigen::Index heads = config_.num_heads;
  const Eigen::Index dh = d / heads;
  const Eigen::Index t = x.rows();
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  Var h = dropout(linear(vars, "ext.in", x), config_.dropout, rng);
  for (int l = 0; l < config_.num_layers; ++l) {
    const std::string p = "ext.l" + std::to_string(l);
    Var a = affine_norm(vars, p + ".norm1", h);
    Var q = linear(vars, p + ".q", a);
    Var k = linear(vars, p + ".k", a);
    Var v = linear(vars, p + ".v", a);
    std::vector<Var> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      Var qh = slice(q, 0, t, hd * dh, dh);
      Var kh = slice(k, 0, t, hd * dh, dh);
      Var vh = slice(v, 0, t, hd * dh, dh);
      Var attn = softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
      head_out.push_back(matmul(attn, vh));
    }
    Var merged = heads == 1 ? head_out.front() : concat_cols(head_out);
    h = add(h, dropout(linear(vars, p + ".o", merged), config_.dropout, rng));
    Var f = affine_norm(vars, p + ".norm2", h);
    Var ff = linear(vars, p + ".ff2", dropout(relu(linear(vars, p + ".ff1", f)), config_.dropout, rng));
    h = add(h, dropout(ff, config_.dropout, rng));
  }
  return mean_rows(affine_norm(vars, "ext.norm", h));
}

Matrix Extractor::encode_all_prefixes(const ad::ParamStore& params, const Matrix& seq, int max_prefix) const {
  if (seq.rows() == 0) throw ShapeError("encode_all_prefixes: empty sequence");
  if (max_prefix < 1) throw ConfigError("max_prefix must be at least 1");
  const Eigen::Index total = seq.rows();
  Matrix latents(total, config_.latent_dim);
  ad::Tape tape(false);
  const ParamVars vars = ad::bind_params(tape, params);
  for (Eigen::Index t = 1; t <= total; ++t) {
    const Eigen::Index len = std::min<Eigen::Index>(t, max_prefix);
    const Matrix prefix = seq.middleRows(t - len, len);
    latents.row(t - 1) = encode(tape, vars, prefix).value();
  }
  return latents;
}

void init_mle_head(ad::ParamStore& params, Eigen::Index latent_dim) {
  params["mle.w"] = Matrix::Zero(latent_dim, 1);
  params["mle.b"] = Matrix::Zero(1, 1);
}

Var mle_head(const ParamVars& vars, Var latents) {
  return add(matmul(latents, get(vars, "mle.w")), get(vars, "mle.b"));
}

double mle_head(const ad::ParamStore& params, const Eigen::Ref<const Vector>& latent) {
  const Matrix& w = params.at("mle.w");
  if (w.rows() != latent.size()) throw ShapeError("mle_head: latent dimension mismatch");
  if (!latent.allFinite()) throw NumericalError("mle_head: non-finite latent");
  return latent.dot(w.col(0)) + params.at("mle.b")(0, 0);
}

}  // namespace trajgp
