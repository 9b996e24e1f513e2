#pragma once

#include "trajgp/data/features.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace trajgp {

/// Encoded encounters of one patient in ascending date order. `targets`
/// holds NaN where a visit has no acuity measurement; such visits remain in
/// the input sequence but are not supervised samples.
struct PatientSequence {
  std::string patient_id;
  std::vector<Date> dates;
  Matrix features;  // T x d
  Vector targets;   // T

  Eigen::Index length() const noexcept { return features.rows(); }
  bool has_target(Eigen::Index i) const { return !std::isnan(targets(i)); }
};

struct SplitIds {
  std::vector<std::string> train;
  std::vector<std::string> val;
  std::vector<std::string> test;
};

/// Shuffles the ids with `seed` and cuts 70/20/10 (round(0.7n), round(0.2n),
/// rest). Requires at least 10 patients.
SplitIds split_patients(std::vector<std::string> patient_ids, std::uint64_t seed);

struct Dataset {
  FeatureLayout layout;
  SpecialCodes codes;
  NormStats stats;
  std::vector<PatientSequence> train;
  std::vector<PatientSequence> val;
  std::vector<PatientSequence> test;

  SplitIds split_ids() const;
};

struct PreprocessConfig {
  FeatureLayout layout;
  SpecialCodes codes;
  std::uint64_t split_seed = 42;
};

/// Group/sort/dedup, split by patient, fit statistics on the training split
/// and encode every record.
Dataset build_dataset(std::vector<RawEncounter> encounters, const PreprocessConfig& config);

PatientSequence encode_patient(const PatientRecords& patient, const NormStats& stats, const FeatureLayout& layout,
                               const SpecialCodes& codes);

/// Writes manifest.json, stats.json and one little-endian float64 shard per
/// split ({train,val,test}.bin) into `dir`.
void save_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Prefix sample: the first `length` records of sequence `patient`,
/// supervised by targets(length - 1).
struct SampleRef {
  std::size_t patient = 0;
  Eigen::Index length = 0;
};

std::vector<SampleRef> enumerate_samples(const std::vector<PatientSequence>& sequences);
Vector sample_targets(const std::vector<PatientSequence>& sequences, const std::vector<SampleRef>& samples);

/// Zeroes the columns of `group` in every split.
void ablate_group(Dataset& data, std::string_view group);

}  // namespace trajgp
