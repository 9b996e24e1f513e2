#pragma once

#include "trajgp/data/records.hpp"

#include <array>
#include <map>
#include <string>
#include <vector>

namespace trajgp {

enum class Archetype { stable_good = 0, progressing = 1, stable_poor = 2 };
inline constexpr int kNumArchetypes = 3;

std::string to_string(Archetype a);

/// Noise-free logMAR of an archetype `years` after the first visit:
/// stable_good 0.1, progressing 0.2 + 0.5 (1 - exp(-years / 0.5)),
/// stable_poor 1.2.
double archetype_curve(Archetype a, double years);
/// Visit-level standard deviation around the curve.
double archetype_noise_sd(Archetype a);

struct SyntheticConfig {
  int n_patients = 1000;
  std::array<double, kNumArchetypes> weights{0.913, 0.074, 0.012};
  /// Exact largest-remainder archetype counts instead of independent draws.
  bool stratified = false;
  double mean_gap_days = 90.0;
  int min_visits = 3;
  int max_visits = 20;
  Eigen::Index embedding_dim = 768;
  /// Fields whose embeddings encode the archetype and current severity.
  std::vector<std::string> signal_fields{"procedures", "medications"};
  /// Signal size relative to unit per-dimension embedding noise.
  double signal_strength = 3.0;
  double embedding_noise = 1.0;
  double field_missing_rate = 0.1;
  double acuity_missing_rate = 0.05;
  int first_year = 2016;
  int last_year = 2023;

  void validate() const;
};

struct SyntheticCohort {
  std::vector<RawEncounter> encounters;  // grouped by patient, ascending dates
  std::map<std::string, int> labels;     // patient id -> archetype index
};

/// Planted three-archetype cohort. Identical (config, seed) give identical
/// output. Each visit records 1-3 Snellen measurements whose minimum is the
/// noisy archetype value rounded to a Snellen denominator.
SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& config, std::uint64_t seed);

/// Fractional years between two dates.
double years_between(const Date& from, const Date& to);

}  // namespace trajgp
