#pragma once

#include "trajgp/eval/metrics.hpp"
#include "trajgp/model/dkl.hpp"

#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace trajgp {

inline const std::vector<std::uint64_t> kProtocolSeeds = {42, 123, 456, 789, 1024, 2048, 3141, 5926, 8765, 4321};

/// Test-set metrics of one trained model next to the constant baseline.
struct SeedOutcome {
  std::uint64_t seed = 0;
  MetricReport model;
  MetricReport baseline;
  bool diverged = false;
  int best_epoch = -1;
};

/// Full pipeline for one seed: split with `seed` (unless `forced_split_seed`
/// is set), fit statistics, train with `seed`, evaluate on the test split.
SeedOutcome run_single_seed(const std::vector<RawEncounter>& encounters, const PreprocessConfig& preprocess,
                            TrainConfig train, std::uint64_t seed,
                            std::optional<std::uint64_t> forced_split_seed = std::nullopt);

struct SeedProtocolResult {
  std::vector<SeedOutcome> completed;  // in the order of the requested seeds
  std::optional<SeedSummary> model;
  std::optional<SeedSummary> baseline;
  /// Set when a seed failed; `completed` then holds the seeds that finished.
  std::optional<std::string> failure;
};

using SeedRunner = std::function<SeedOutcome(std::uint64_t)>;

/// Runs `runner` for every seed on at most `jobs` threads and reduces the
/// results in seed order. Summaries need at least two completed seeds.
SeedProtocolResult run_seed_protocol(const std::vector<std::uint64_t>& seeds, const SeedRunner& runner, int jobs = 1);

nlohmann::json to_json(const SeedProtocolResult& r);

struct AblationResult {
  std::string group;
  MetricReport baseline;
  MetricReport ablated;
  double delta_mse() const { return ablated.mse - baseline.mse; }
};

/// Trains on `data` and on a copy with `group` zeroed in every split, both
/// from the same seed, and reports the test metrics of each.
AblationResult ablate_feature_group(const Dataset& data, const TrainConfig& config, const std::string& group);
/// Ablation table over several groups sharing one baseline run.
std::vector<AblationResult> ablate_feature_groups(const Dataset& data, const TrainConfig& config,
                                                  const std::vector<std::string>& groups);

nlohmann::json to_json(const std::vector<AblationResult>& rows);
std::string format_ablation_table(const std::vector<AblationResult>& rows);

struct ImportanceResult {
  std::string group;
  double baseline_mse = 0.0;
  double permuted_mse = 0.0;
  double delta_mse() const { return permuted_mse - baseline_mse; }
};

/// Permutes the rows of the group's columns across every record of
/// `sequences` (fixed seed) and reports the change in test MSE. No retraining.
ImportanceResult permutation_importance(const DklModel& model, const FeatureLayout& layout,
                                        const std::vector<PatientSequence>& sequences, const std::string& group,
                                        std::uint64_t seed);

nlohmann::json to_json(const std::vector<ImportanceResult>& rows);
std::string format_importance_table(const std::vector<ImportanceResult>& rows);

}  // namespace trajgp
