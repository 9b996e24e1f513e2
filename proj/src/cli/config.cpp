#include "trajgp/cli/config.hpp"

#include "trajgp/encoding.hpp"

#include <fstream>
#include <set>

namespace trajgp {

using nlohmann::json;

namespace {

// Reads keys of one JSON object and remembers which were consumed, so that
// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void read(const char* key, T& out) {
    known_.insert(key);
    if (!doc_.contains(key)) return;
    try {
      out = doc_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError("'" + child(key) + "' has the wrong type (" + doc_.at(key).dump() + ")");
    }
  }

  Section section(const char* key) {
    known_.insert(key);
    static const json empty = json::object();
    return Section(doc_.contains(key) ? doc_.at(key) : empty, child(key));
  }

  bool has(const char* key) const { return doc_.contains(key); }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!known_.count(key)) {
        std::string valid;
        for (const auto& k : known_) valid += (valid.empty() ? "" : ", ") + k;
        throw ConfigError("unknown configuration key '" + child(key) + "' (known: " + valid + ")");
      }
    }
  }

 private:
  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "configuration" : "'" + path_ + "'"; }

  const json& doc_;
  std::string path_;
  std::set<std::string> known_;
};

}  // namespace

void ExperimentConfig::validate() const {
  if (data.source != "synthetic" && data.source != "jsonl" && data.source != "csv")
    throw ConfigError("data.source must be one of synthetic, jsonl, csv (got '" + data.source + "')");
  if (data.source != "synthetic" && data.path.empty())
    throw ConfigError("data.path is required when data.source is '" + data.source + "'");
  if (data.embedding_dim < 1) throw ConfigError("data.embedding_dim must be at least 1");
  synthetic.validate();
  ExtractorConfig ex = train.extractor;
  ex.input_dim = FeatureLayout{data.embedding_dim}.dim();
  ex.validate();
  train.validate();
  if (evaluation.protocol && evaluation.seeds.size() < 2)
    throw ConfigError("evaluation.seeds needs at least two seeds for the protocol");
  const FeatureLayout layout{data.embedding_dim};
  for (const auto& g : ablation_groups) feature_group_columns(layout, g);
  for (const auto& g : importance_groups) feature_group_columns(layout, g);
  if (clustering.methods.empty()) throw ConfigError("clustering.methods must not be empty");
  for (int c : clustering.c_values)
    if (c < 2) throw ConfigError("clustering.c_values entries must be at least 2");
  if (clustering.c_values.empty()) throw ConfigError("clustering.c_values must not be empty");
  if (clustering.profile.grid < 2) throw ConfigError("clustering.grid must be at least 2");
  if (clustering.stability_runs < 2) throw ConfigError("clustering.stability_runs must be at least 2");
  if (!(clustering.subsample > 0.0 && clustering.subsample <= 1.0))
    throw ConfigError("clustering.subsample must lie in (0, 1]");
}

ExperimentConfig parse_config(const json& doc) {
  ExperimentConfig cfg;
  Section root(doc, "");
  root.read("seed", cfg.seed);

  {
    Section s = root.section("data");
    std::string path, labels;
    s.read("source", cfg.data.source);
    s.read("path", path);
    s.read("labels", labels);
    s.read("embedding_dim", cfg.data.embedding_dim);
    cfg.data.path = path;
    cfg.data.labels = labels;
    Section codes = s.section("special_codes");
    codes.read("CF", cfg.data.codes.count_fingers);
    codes.read("HM", cfg.data.codes.hand_motion);
    codes.read("LP", cfg.data.codes.light_perception);
    codes.read("NLP", cfg.data.codes.no_light_perception);
    codes.finish();
    s.finish();
  }
  {
    Section s = root.section("synthetic");
    SyntheticConfig& c = cfg.synthetic;
    std::vector<double> weights(c.weights.begin(), c.weights.end());
    s.read("n_patients", c.n_patients);
    s.read("weights", weights);
    if (weights.size() != c.weights.size()) throw ConfigError("synthetic.weights needs exactly 3 entries");
    std::copy(weights.begin(), weights.end(), c.weights.begin());
    s.read("stratified", c.stratified);
    s.read("mean_gap_days", c.mean_gap_days);
    s.read("min_visits", c.min_visits);
    s.read("max_visits", c.max_visits);
    s.read("signal_fields", c.signal_fields);
    s.read("signal_strength", c.signal_strength);
    s.read("embedding_noise", c.embedding_noise);
    s.read("field_missing_rate", c.field_missing_rate);
    s.read("acuity_missing_rate", c.acuity_missing_rate);
    s.read("first_year", c.first_year);
    s.read("last_year", c.last_year);
    c.embedding_dim = cfg.data.embedding_dim;
    s.finish();
  }
  {
    Section s = root.section("extractor");
    std::string arch = to_string(cfg.train.extractor.arch);
    s.read("arch", arch);
    const TunedDefaults tuned = tuned_defaults(parse_architecture(arch));
    cfg.train.extractor = tuned.extractor;
    cfg.train.num_inducing = tuned.num_inducing;
    cfg.train.batch_size = tuned.batch_size;
    cfg.train.learning_rate = tuned.learning_rate;
    ExtractorConfig& e = cfg.train.extractor;
    s.read("hidden_dim", e.hidden_dim);
    s.read("num_layers", e.num_layers);
    s.read("num_heads", e.num_heads);
    s.read("feedforward_dim", e.feedforward_dim);
    s.read("decoder_dim", e.decoder_dim);
    s.read("latent_dim", e.latent_dim);
    s.read("dropout", e.dropout);
    s.finish();
  }
  {
    Section s = root.section("train");
    TrainConfig& t = cfg.train;
    std::string head = to_string(t.head);
    s.read("head", head);
    t.head = parse_head(head);
    s.read("num_inducing", t.num_inducing);
    s.read("batch_size", t.batch_size);
    s.read("epochs", t.epochs);
    s.read("learning_rate", t.learning_rate);
    s.read("clip_norm", t.clip_norm);
    s.read("max_prefix", t.max_prefix);
    s.read("warmup_samples", t.warmup_samples);
    Section j = s.section("jitter");
    j.read("initial", t.jitter.initial);
    j.read("factor", t.jitter.factor);
    j.read("maximum", t.jitter.maximum);
    j.finish();
    s.finish();
  }
  {
    Section s = root.section("evaluation");
    s.read("protocol", cfg.evaluation.protocol);
    s.read("seeds", cfg.evaluation.seeds);
    s.finish();
  }
  cfg.ablation_groups.assign(kFeatureGroups.begin(), kFeatureGroups.end());
  cfg.importance_groups = cfg.ablation_groups;
  {
    Section s = root.section("ablation");
    s.read("groups", cfg.ablation_groups);
    s.finish();
  }
  {
    Section s = root.section("importance");
    s.read("groups", cfg.importance_groups);
    s.finish();
  }
  {
    Section s = root.section("clustering");
    ClusteringConfig& c = cfg.clustering;
    std::vector<std::string> methods;
    for (auto m : c.methods) methods.push_back(to_string(m));
    s.read("methods", methods);
    c.methods.clear();
    for (const auto& m : methods) c.methods.push_back(parse_cluster_method(m));
    s.read("c_values", c.c_values);
    s.read("grid", c.profile.grid);
    s.read("log_variance", c.profile.log_variance);
    s.read("standardize", c.profile.standardize);
    s.read("stability_runs", c.stability_runs);
    s.read("subsample", c.subsample);
    s.read("sample_size", c.sample_size);
    s.finish();
  }
  root.finish();
  cfg.train.seed = cfg.seed;
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open configuration file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("configuration file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(doc);
}

json config_to_json(const ExperimentConfig& c) {
  const auto& e = c.train.extractor;
  const auto& t = c.train;
  json methods = json::array();
  for (auto m : c.clustering.methods) methods.push_back(to_string(m));
  return {
      {"seed", c.seed},
      {"data",
       {{"source", c.data.source},
        {"path", c.data.path.string()},
        {"labels", c.data.labels.string()},
        {"embedding_dim", c.data.embedding_dim},
        {"special_codes",
         {{"CF", c.data.codes.count_fingers},
          {"HM", c.data.codes.hand_motion},
          {"LP", c.data.codes.light_perception},
          {"NLP", c.data.codes.no_light_perception}}}}},
      {"synthetic",
       {{"n_patients", c.synthetic.n_patients},
        {"weights", c.synthetic.weights},
        {"stratified", c.synthetic.stratified},
        {"mean_gap_days", c.synthetic.mean_gap_days},
        {"min_visits", c.synthetic.min_visits},
        {"max_visits", c.synthetic.max_visits},
        {"signal_fields", c.synthetic.signal_fields},
        {"signal_strength", c.synthetic.signal_strength},
        {"embedding_noise", c.synthetic.embedding_noise},
        {"field_missing_rate", c.synthetic.field_missing_rate},
        {"acuity_missing_rate", c.synthetic.acuity_missing_rate},
        {"first_year", c.synthetic.first_year},
        {"last_year", c.synthetic.last_year}}},
      {"extractor",
       {{"arch", to_string(e.arch)},
        {"hidden_dim", e.hidden_dim},
        {"num_layers", e.num_layers},
        {"num_heads", e.num_heads},
        {"feedforward_dim", e.feedforward_dim},
        {"decoder_dim", e.decoder_dim},
        {"latent_dim", e.latent_dim},
        {"dropout", e.dropout}}},
      {"train",
       {{"head", to_string(t.head)},
        {"num_inducing", t.num_inducing},
        {"batch_size", t.batch_size},
        {"epochs", t.epochs},
        {"learning_rate", t.learning_rate},
        {"clip_norm", t.clip_norm},
        {"max_prefix", t.max_prefix},
        {"warmup_samples", t.warmup_samples},
        {"jitter", {{"initial", t.jitter.initial}, {"factor", t.jitter.factor}, {"maximum", t.jitter.maximum}}}}},
      {"evaluation", {{"protocol", c.evaluation.protocol}, {"seeds", c.evaluation.seeds}}},
      {"ablation", {{"groups", c.ablation_groups}}},
      {"importance", {{"groups", c.importance_groups}}},
      {"clustering",
       {{"methods", methods},
        {"c_values", c.clustering.c_values},
        {"grid", c.clustering.profile.grid},
        {"log_variance", c.clustering.profile.log_variance},
        {"standardize", c.clustering.profile.standardize},
        {"stability_runs", c.clustering.stability_runs},
        {"subsample", c.clustering.subsample},
        {"sample_size", c.clustering.sample_size}}},
  };
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not of the form key=value");
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  json* node = &doc;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    if (!node->is_object()) *node = json::object();
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    node = &(*node)[part];
    start = dot + 1;
  }
}

std::string config_hash(const json& resolved) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  return sha256_hex(resolved.dump());
}

}  // namespace trajgp
