#pragma once

#include "trajgp/common.hpp"
#include "trajgp/data/snellen.hpp"
#include "trajgp/extractors/cyclical.hpp"

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace trajgp {

inline constexpr int kNumTextFields = 7;

/// Embedded text fields in feature order.
inline constexpr std::array<const char*, kNumTextFields> kTextFields = {
    "specialty", "visit_type", "reason", "procedures", "diagnoses", "medications", "lab_results"};

/// Index into kTextFields; throws DataError for unknown names.
int text_field_index(std::string_view name);

/// One encounter as ingested. Missing age is std::nullopt (the "-1" sentinel
/// is translated at the file boundary); a missing text field has no vector.
struct RawEncounter {
  std::string patient_id;
  Date date;
  std::optional<double> age;
  std::string sex;
  std::string race;
  std::string ethnicity;
  std::array<std::optional<Vector>, kNumTextFields> embeddings;
  std::vector<std::string> acuity;

  /// Best logMAR over parseable measurements; nullopt when none are present.
  /// Throws DataError on a malformed entry.
  std::optional<double> target(const SpecialCodes& codes = {}) const;

  bool operator==(const RawEncounter& other) const;
};

struct ReadReport {
  std::size_t rows = 0;
  std::size_t skipped = 0;
  std::vector<std::string> errors;  // first few messages, "line N: ..."
};

/// JSON-lines reader. Rows that fail to parse (bad JSON, bad date, malformed
/// acuity, wrong embedding length) are skipped and counted in `report`.
/// `embedding_dim` of 0 accepts any length.
std::vector<RawEncounter> read_encounters_jsonl(const std::filesystem::path& path, Eigen::Index embedding_dim,
                                                const SpecialCodes& codes, ReadReport* report = nullptr);
void write_encounters_jsonl(const std::filesystem::path& path, const std::vector<RawEncounter>& encounters);

std::string encounter_to_json_line(const RawEncounter& e);
RawEncounter encounter_from_json_line(std::string_view line, Eigen::Index embedding_dim, const SpecialCodes& codes);

/// Targets-only CSV: patient_id,encounter_date,age,sex,race,ethnicity,acuity
/// with multiple acuity entries separated by ';'. No embeddings.
std::vector<RawEncounter> read_encounters_csv(const std::filesystem::path& path, const SpecialCodes& codes,
                                              ReadReport* report = nullptr);

struct PatientRecords {
  std::string patient_id;
  std::vector<RawEncounter> encounters;  // ascending by date
};

/// Groups by patient (ids ascending), sorts each patient by date with a
/// stable sort and drops later duplicates of the same date. Idempotent.
std::vector<PatientRecords> group_patients(std::vector<RawEncounter> encounters);

}  // namespace trajgp
