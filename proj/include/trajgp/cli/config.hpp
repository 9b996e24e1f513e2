#pragma once

#include "trajgp/cluster/clustering.hpp"
#include "trajgp/data/synthetic.hpp"
#include "trajgp/eval/experiment.hpp"
#include "trajgp/model/dkl.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace trajgp {

struct DataSourceConfig {
  /// "synthetic" (cohort written by `generate`), "jsonl" or "csv".
  std::string source = "synthetic";
  std::filesystem::path path;    // encounter file for jsonl/csv
  std::filesystem::path labels;  // optional ground-truth archetype labels
  Eigen::Index embedding_dim = 768;
  SpecialCodes codes;
};

struct EvaluationConfig {
  /// Run the per-seed split/train/test protocol in addition to scoring the
  /// trained checkpoint.
  bool protocol = false;
  std::vector<std::uint64_t> seeds = kProtocolSeeds;
};

struct ClusteringConfig {
  std::vector<ClusterMethod> methods{std::begin(kClusterMethods), std::end(kClusterMethods)};
  std::vector<int> c_values{2, 3, 4, 5};
  ProfileConfig profile;
  int stability_runs = 100;
  double subsample = 0.9;
  /// Patients drawn (seeded) before profiling; 0 keeps everyone.
  std::size_t sample_size = 0;
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  DataSourceConfig data;
  SyntheticConfig synthetic;
  TrainConfig train;
  EvaluationConfig evaluation;
  std::vector<std::string> ablation_groups;
  std::vector<std::string> importance_groups;
  ClusteringConfig clustering;

  void validate() const;
};

/// Parses a configuration document. Unknown keys anywhere raise ConfigError
/// with their dotted path. Extractor and optimizer settings default to the
/// tuned values of the chosen `model.arch`.
ExperimentConfig parse_config(const nlohmann::json& doc);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Fully resolved configuration (every key, defaults filled in).
nlohmann::json config_to_json(const ExperimentConfig& config);

/// Applies "a.b.c=value" overrides to a document; `value` is parsed as JSON
/// and falls back to a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// SHA-256 of the canonical (sorted-key, compact) serialization.
std::string config_hash(const nlohmann::json& resolved);

}  // namespace trajgp
