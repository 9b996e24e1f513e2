#pragma once

#include "trajgp/data/records.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace trajgp {

/// Column layout of an encoded record:
///
///   0            age (z-scored)
///   1..6         day sin/cos, month sin/cos, year sin/cos
///   7 + f*E ...  embedding block of text field f (kTextFields order), E wide
///   7 + 7E + f   presence bit of text field f
///
/// dim() = 14 + 7E, i.e. 5390 for E = 768.
struct FeatureLayout {
  Eigen::Index embedding_dim = 768;

  static constexpr Eigen::Index age_index() noexcept { return 0; }
  static constexpr Eigen::Index cyclical_offset() noexcept { return 1; }
  Eigen::Index embedding_offset(int field) const noexcept { return 7 + field * embedding_dim; }
  Eigen::Index presence_index(int field) const noexcept { return 7 + kNumTextFields * embedding_dim + field; }
  Eigen::Index dim() const noexcept { return 7 + kNumTextFields * (embedding_dim + 1); }

  /// Human-readable name of column `i` (e.g. "age", "month_cos",
  /// "emb.diagnoses[12]", "present.lab_results").
  std::string column_name(Eigen::Index i) const;
};

/// z-normalization statistics, computed from training patients only.
/// Embedding statistics are per dimension over records where the field is
/// present; zero standard deviations are replaced by 1.
struct NormStats {
  double age_mean = 0.0;
  double age_std = 1.0;
  Matrix embedding_mean;  // kNumTextFields x E
  Matrix embedding_std;   // kNumTextFields x E

  bool operator==(const NormStats& other) const;
};

NormStats compute_stats(const std::vector<const RawEncounter*>& training_records, const FeatureLayout& layout);
nlohmann::json stats_to_json(const NormStats& stats);
NormStats stats_from_json(const nlohmann::json& j);

struct EncodedRecord {
  Vector features;
  Date date;
  std::optional<double> target;
};

/// Missing embeddings become zero blocks with presence bit 0; a missing age
/// becomes the training mean (z = 0). Throws DataError on an embedding of the
/// wrong length.
EncodedRecord assemble_features(const RawEncounter& raw, const NormStats& stats, const FeatureLayout& layout,
                                const SpecialCodes& codes = {});

/// Ablation groups and the columns they cover.
inline constexpr std::array<const char*, 9> kFeatureGroups = {
    "MED_NAME", "SURGERIES", "VISIT_TYPE", "PROC_NAME", "DX_NAME", "SPECIALTY", "REASON_FOR_VISIT", "AGE",
    "LAB_RESULTS"};

/// Column indices of a group (embedding block plus presence bit, or the age
/// column). Throws ConfigError for unknown groups.
std::vector<Eigen::Index> feature_group_columns(const FeatureLayout& layout, std::string_view group);

}  // namespace trajgp
