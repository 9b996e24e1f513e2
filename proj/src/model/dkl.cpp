#include "trajgp/model/dkl.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <numeric>
#include <random>

namespace trajgp {

using nlohmann::json;

std::string to_string(Head h) { return h == Head::gp ? "gp" : "mle"; }

Head parse_head(const std::string& name) {
  if (name == "gp") return Head::gp;
  if (name == "mle") return Head::mle;
  throw ConfigError("train.head: unknown head '" + name + "' (expected gp or mle)");
}

void TrainConfig::validate() const {
  if (num_inducing < 1) throw ConfigError("train.num_inducing must be at least 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be at least 1");
  if (epochs < 1) throw ConfigError("train.epochs must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (max_prefix < 1) throw ConfigError("train.max_prefix must be at least 1");
  if (warmup_samples < 1) throw ConfigError("train.warmup_samples must be at least 1");
}

namespace {

ad::Var encode_batch(ad::Tape& tape, const ParamVars& vars, const Extractor& ex,
                     const std::vector<PatientSequence>& seqs, const std::vector<SampleRef>& samples,
                     std::span<const std::size_t> batch, int max_prefix, std::mt19937_64* dropout_rng) {
  std::vector<ad::Var> rows;
  rows.reserve(batch.size());
  for (std::size_t idx : batch) {
    const SampleRef& s = samples[idx];
    const Eigen::Index len = std::min<Eigen::Index>(s.length, max_prefix);
    rows.push_back(ex.encode(tape, vars, seqs[s.patient].features.middleRows(s.length - len, len), dropout_rng));
  }
  return rows.size() == 1 ? rows.front() : ad::concat_rows(rows);
}

GaussianPrediction head_predict(const DklModel& model, const Matrix& latents) {
  if (model.head == Head::gp) return svgp_predict(load_state(model.params, model.jitter), latents);
  GaussianPrediction out;
  const Matrix& w = model.params.at("mle.w");
  out.mean = (latents * w).col(0).array() + model.params.at("mle.b")(0, 0);
  out.latent_variance = Vector::Zero(latents.rows());
  auto it = model.params.find("mle.var");
  const double var = it == model.params.end() ? 1.0 : it->second(0, 0);
  out.variance = Vector::Constant(latents.rows(), var);
  return out;
}

double mse_of(const Vector& a, const Vector& b) {
  return a.size() == 0 ? 0.0 : (a - b).squaredNorm() / static_cast<double>(a.size());
}

}  // namespace

SamplePredictions predict_sequence(const DklModel& model, const PatientSequence& sequence) {
  Extractor ex(model.extractor);
  SamplePredictions out;
  out.latents = ex.encode_all_prefixes(model.params, sequence.features, model.max_prefix);
  out.prediction = head_predict(model, out.latents);
  out.targets = sequence.targets;
  return out;
}

SamplePredictions predict_samples(const DklModel& model, const std::vector<PatientSequence>& sequences) {
  Extractor ex(model.extractor);
  const auto samples = enumerate_samples(sequences);
  SamplePredictions out;
  out.latents.resize(static_cast<Eigen::Index>(samples.size()), model.extractor.latent_dim);
  out.targets = sample_targets(sequences, samples);
  std::size_t k = 0;
  for (std::size_t p = 0; p < sequences.size(); ++p) {
    if (sequences[p].length() == 0) continue;
    bool any = false;
    for (Eigen::Index t = 0; t < sequences[p].length(); ++t) any = any || sequences[p].has_target(t);
    if (!any) continue;
    const Matrix all = ex.encode_all_prefixes(model.params, sequences[p].features, model.max_prefix);
    for (Eigen::Index t = 0; t < sequences[p].length(); ++t) {
      if (sequences[p].has_target(t)) out.latents.row(static_cast<Eigen::Index>(k++)) = all.row(t);
    }
  }
  out.prediction = head_predict(model, out.latents);
  return out;
}

TrainResult train_dkl(const Dataset& data, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  TrainResult result;
  DklModel& model = result.model;
  model.extractor = config.extractor;
  model.extractor.input_dim = data.layout.dim();
  model.head = config.head;
  model.max_prefix = config.max_prefix;
  model.jitter = config.jitter;
  const Extractor ex(model.extractor);

  const auto samples = enumerate_samples(data.train);
  if (samples.empty()) throw DataError("train_dkl: the training split has no supervised samples");
  const Vector y = sample_targets(data.train, samples);
  const double n = static_cast<double>(samples.size());
  const double y_mean = y.mean();

  ad::ParamStore params;
  ex.init_params(params, derive_seed(config.seed, "init.extractor"));
  if (config.head == Head::gp) {
    std::vector<std::size_t> pick(samples.size());
    std::iota(pick.begin(), pick.end(), 0);
    std::mt19937_64 rng(derive_seed(config.seed, "init.warmup"));
    std::shuffle(pick.begin(), pick.end(), rng);
    pick.resize(std::min(pick.size(), config.warmup_samples));
    ad::Tape tape(false);
    const auto vars = ad::bind_params(tape, params);
    Matrix h(static_cast<Eigen::Index>(pick.size()), model.extractor.latent_dim);
    Vector yw(h.rows());
    for (std::size_t i = 0; i < pick.size(); ++i) {
      const std::size_t one[] = {pick[i]};
      h.row(static_cast<Eigen::Index>(i)) =
          encode_batch(tape, vars, ex, data.train, samples, one, config.max_prefix, nullptr).value();
      yw(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(pick[i]));
    }
    SvgpState state = init_svgp(h, yw, config.num_inducing, derive_seed(config.seed, "init.gp"), config.jitter);
    state.mean = y_mean;
    state.noise = std::max(0.1 * (y.array() - y_mean).square().mean(), 1e-6);
    state.var_mean.setConstant(y_mean);
    store_state(state, params);
  } else {
    init_mle_head(params, model.extractor.latent_dim);
    params["mle.b"](0, 0) = y_mean;
  }

  ad::AdamState adam;
  ad::AdamConfig adam_cfg;
  adam_cfg.learning_rate = config.learning_rate;
  adam_cfg.clip_norm = config.clip_norm;
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  double best_val = std::numeric_limits<double>::infinity();
  const bool has_val = !enumerate_samples(data.val).empty();
  model.params = params;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 shuffle_rng(derive_seed(config.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    std::mt19937_64 dropout_rng(derive_seed(config.seed, "dropout", static_cast<std::uint64_t>(epoch)));
    double objective_sum = 0.0;
    std::size_t batches = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t len = std::min(static_cast<std::size_t>(config.batch_size), order.size() - start);
        std::span<const std::size_t> batch(order.data() + start, len);
        Vector yb(static_cast<Eigen::Index>(len));
        for (std::size_t i = 0; i < len; ++i) yb(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(batch[i]));
        ad::Tape tape;
        const auto vars = ad::bind_params(tape, params);
        ad::Var h = encode_batch(tape, vars, ex, data.train, samples, batch, config.max_prefix, &dropout_rng);
        ad::Var loss;
        double objective = 0.0;
        if (config.head == Head::gp) {
          ElboTerms terms = elbo_terms(tape, vars, h, yb, n, config.jitter);
          objective = terms.elbo.item();
          loss = ad::scale(terms.elbo, -1.0 / n);
        } else {
          loss = ad::mean(ad::square(ad::sub(mle_head(vars, h), tape.constant(Matrix(yb)))));
          objective = -loss.item();
        }
        if (!std::isfinite(objective)) throw NumericalError("non-finite training objective");
        ad::adam_step(params, tape.backward(loss), adam, adam_cfg);
        objective_sum += objective;
        ++batches;
      }
    } catch (const NumericalError& e) {
      result.diverged = true;
      result.message = "training diverged in epoch " + std::to_string(epoch) + ": " + e.what();
      break;
    }

    DklModel current = model;
    current.params = params;
    double val_mse = std::numeric_limits<double>::quiet_NaN();
    if (has_val) {
      if (config.head == Head::mle) current.params["mle.var"] = Matrix::Constant(1, 1, 1.0);
      const SamplePredictions pv = predict_samples(current, data.val);
      val_mse = mse_of(pv.prediction.mean, pv.targets);
    }
    TrainLogEntry entry;
    entry.epoch = epoch;
    entry.elbo = objective_sum / static_cast<double>(std::max<std::size_t>(batches, 1));
    entry.val_mse = val_mse;
    entry.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    if (!has_val || val_mse < best_val) {
      best_val = has_val ? val_mse : best_val;
      result.best_epoch = epoch;
      model.params = params;
    }
  }

  if (config.head == Head::mle) {
    model.params["mle.var"] = Matrix::Constant(1, 1, 1.0);
    const SamplePredictions pt = predict_samples(model, data.train);
    model.params["mle.var"] = Matrix::Constant(1, 1, std::max(mse_of(pt.prediction.mean, pt.targets), 1e-12));
  }
  return result;
}

void save_model(const DklModel& model, const std::filesystem::path& path) {
  const ExtractorConfig& e = model.extractor;
  json j;
  j["format"] = "trajgp-model-1";
  j["head"] = to_string(model.head);
  j["max_prefix"] = model.max_prefix;
  j["jitter"] = {{"initial", model.jitter.initial}, {"factor", model.jitter.factor}, {"maximum", model.jitter.maximum}};
  j["extractor"] = {{"arch", to_string(e.arch)},
                    {"input_dim", e.input_dim},
                    {"hidden_dim", e.hidden_dim},
                    {"num_layers", e.num_layers},
                    {"num_heads", e.num_heads},
                    {"feedforward_dim", e.feedforward_dim},
                    {"decoder_dim", e.decoder_dim},
                    {"latent_dim", e.latent_dim},
                    {"dropout", e.dropout}};
  j["params"] = json::parse(ad::encode_params(model.params));
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model to '" + path.string() + "'");
  out << j.dump(1) << '\n';
}

DklModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model '" + path.string() + "'");
  DklModel m;
  try {
    const json j = json::parse(in);
    if (j.at("format").get<std::string>() != "trajgp-model-1") throw DataError("unknown model format");
    m.head = parse_head(j.at("head").get<std::string>());
    m.max_prefix = j.at("max_prefix").get<int>();
    const auto& jj = j.at("jitter");
    m.jitter = {jj.at("initial").get<double>(), jj.at("factor").get<double>(), jj.at("maximum").get<double>()};
    const auto& je = j.at("extractor");
    m.extractor.arch = parse_architecture(je.at("arch").get<std::string>());
    m.extractor.input_dim = je.at("input_dim").get<Eigen::Index>();
    m.extractor.hidden_dim = je.at("hidden_dim").get<Eigen::Index>();
    m.extractor.num_layers = je.at("num_layers").get<int>();
    m.extractor.num_heads = je.at("num_heads").get<int>();
    m.extractor.feedforward_dim = je.at("feedforward_dim").get<Eigen::Index>();
    m.extractor.decoder_dim = je.at("decoder_dim").get<Eigen::Index>();
    m.extractor.latent_dim = je.at("latent_dim").get<Eigen::Index>();
    m.extractor.dropout = je.at("dropout").get<double>();
    m.extractor.validate();
    m.params = ad::decode_params(j.at("params").dump());
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed model file: ") + ex.what());
  }
  return m;
}

}  // namespace trajgp
