#include "trajgp/data/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace trajgp {

std::string to_string(Archetype a) {
  switch (a) {
    case Archetype::stable_good: return "stable_good";
    case Archetype::progressing: return "progressing";
    case Archetype::stable_poor: return "stable_poor";
  }
  return "unknown";
}

double archetype_curve(Archetype a, double years) {
  switch (a) {
    case Archetype::stable_good: return 0.1;
    case Archetype::progressing: return 0.2 + 0.5 * (1.0 - std::exp(-std::max(years, 0.0) / 0.5));
    case Archetype::stable_poor: return 1.2;
  }
  return 0.0;
}

double archetype_noise_sd(Archetype a) {
  switch (a) {
    case Archetype::stable_good: return 0.05;
    case Archetype::progressing: return 0.15;
    case Archetype::stable_poor: return 0.08;
  }
  return 0.0;
}

void SyntheticConfig::validate() const {
  if (n_patients < 3) throw ConfigError("synthetic.n_patients must be at least 3");
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("synthetic.weights must be non-negative");
    total += w;
  }
  if (!(total > 0.0)) throw ConfigError("synthetic.weights must not all be zero");
  if (min_visits < 1 || max_visits < min_visits) throw ConfigError("synthetic visit bounds are invalid");
  if (!(mean_gap_days > 0.0)) throw ConfigError("synthetic.mean_gap_days must be positive");
  if (embedding_dim < 1) throw ConfigError("synthetic.embedding_dim must be positive");
  for (const auto& f : signal_fields) text_field_index(f);
  if (!(field_missing_rate >= 0.0 && field_missing_rate < 1.0) ||
      !(acuity_missing_rate >= 0.0 && acuity_missing_rate < 1.0)) {
    throw ConfigError("synthetic missing rates must lie in [0, 1)");
  }
  if (last_year < first_year) throw ConfigError("synthetic.last_year precedes first_year");
}

double years_between(const Date& from, const Date& to) {
  return static_cast<double>(days_since_epoch(to) - days_since_epoch(from)) / 365.25;
}

namespace {

std::string snellen_string(double logmar) {
  if (logmar >= 2.85) return "NLP";
  if (logmar >= 2.5) return "LP";
  if (logmar >= 2.1) return "HM";
  if (logmar >= 1.9) return "CF";
  const long d = std::max(1L, std::lround(20.0 * std::pow(10.0, logmar)));
  return "20/" + std::to_string(d);
}

Vector unit_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = g(rng);
  return v / v.norm();
}

}  // namespace

SyntheticCohort generate_synthetic_cohort(const SyntheticConfig& config, std::uint64_t seed) {
  config.validate();
  const Eigen::Index e = config.embedding_dim;
  std::array<bool, kNumTextFields> is_signal{};
  for (const auto& f : config.signal_fields) is_signal[text_field_index(f)] = true;

  // Archetype and severity directions shared by the whole cohort.
  std::mt19937_64 dir_rng(derive_seed(seed, "synthetic.directions"));
  std::array<std::array<Vector, kNumArchetypes>, kNumTextFields> arche_dir;
  std::array<Vector, kNumTextFields> severity_dir;
  for (int f = 0; f < kNumTextFields; ++f) {
    for (int a = 0; a < kNumArchetypes; ++a) arche_dir[f][a] = unit_vector(e, dir_rng);
    severity_dir[f] = unit_vector(e, dir_rng);
  }

  static const char* kSex[] = {"F", "M"};
  static const char* kRace[] = {"White", "Black", "Asian", "Other"};
  static const char* kEthnicity[] = {"Hispanic", "Non-Hispanic"};
  const long first_day = days_since_epoch(Date{std::chrono::year{config.first_year}, std::chrono::January,
                                               std::chrono::day{1}});
  const long last_day = days_since_epoch(Date{std::chrono::year{config.last_year}, std::chrono::December,
                                              std::chrono::day{31}});

  SyntheticCohort out;
  std::discrete_distribution<int> pick_archetype(config.weights.begin(), config.weights.end());
  std::vector<int> quota;
  if (config.stratified) {
    const double total = config.weights[0] + config.weights[1] + config.weights[2];
    std::array<int, kNumArchetypes> count{};
    std::array<double, kNumArchetypes> rem{};
    int assigned = 0;
    for (int a = 0; a < kNumArchetypes; ++a) {
      const double exact = config.weights[a] / total * config.n_patients;
      count[a] = static_cast<int>(std::floor(exact));
      rem[a] = exact - count[a];
      assigned += count[a];
    }
    for (; assigned < config.n_patients; ++assigned) {
      const int a = static_cast<int>(std::max_element(rem.begin(), rem.end()) - rem.begin());
      ++count[a];
      rem[a] = -1.0;
    }
    for (int a = 0; a < kNumArchetypes; ++a) quota.insert(quota.end(), count[a], a);
    std::mt19937_64 assign_rng(derive_seed(seed, "synthetic.assign"));
    std::shuffle(quota.begin(), quota.end(), assign_rng);
  }
  for (int i = 0; i < config.n_patients; ++i) {
    std::mt19937_64 rng(derive_seed(seed, "synthetic.patient", static_cast<std::uint64_t>(i)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    char id_buf[32];
    std::snprintf(id_buf, sizeof id_buf, "P%06d", i);
    const std::string id = id_buf;
    const int drawn = pick_archetype(rng);
    const auto arche = static_cast<Archetype>(config.stratified ? quota[static_cast<std::size_t>(i)] : drawn);
    out.labels[id] = static_cast<int>(arche);

    const int visits = std::uniform_int_distribution<int>(config.min_visits, config.max_visits)(rng);
    long day = std::uniform_int_distribution<long>(first_day, std::max(first_day, last_day - 365))(rng);
    const long start_day = day;
    const double base_age = 40.0 + 45.0 * unif(rng);
    const std::string sex = kSex[std::uniform_int_distribution<int>(0, 1)(rng)];
    const std::string race = kRace[std::uniform_int_distribution<int>(0, 3)(rng)];
    const std::string ethnicity = kEthnicity[std::uniform_int_distribution<int>(0, 1)(rng)];
    std::exponential_distribution<double> gap(1.0 / config.mean_gap_days);

    for (int v = 0; v < visits; ++v) {
      if (v > 0) day += std::max(1L, std::lround(gap(rng)));
      const double years = static_cast<double>(day - start_day) / 365.25;
      RawEncounter enc;
      enc.patient_id = id;
      enc.date = date_from_days(day);
      enc.age = std::round((base_age + years) * 10.0) / 10.0;
      enc.sex = sex;
      enc.race = race;
      enc.ethnicity = ethnicity;

      const double curve = archetype_curve(arche, years);
      const double truth = curve + archetype_noise_sd(arche) * gauss(rng);
      if (unif(rng) >= config.acuity_missing_rate) {
        const int n_meas = std::uniform_int_distribution<int>(1, 3)(rng);
        std::vector<std::string> meas{snellen_string(truth)};
        for (int k = 1; k < n_meas; ++k) meas.push_back(snellen_string(truth + 0.05 + std::abs(0.2 * gauss(rng))));
        std::shuffle(meas.begin(), meas.end(), rng);
        enc.acuity = std::move(meas);
      }

      const double severity = (curve - 0.65) / 0.55;
      for (int f = 0; f < kNumTextFields; ++f) {
        if (unif(rng) < config.field_missing_rate) continue;
        Vector emb(e);
        for (Eigen::Index k = 0; k < e; ++k) emb(k) = config.embedding_noise * gauss(rng);
        if (is_signal[f]) {
          emb += config.signal_strength *
                 (arche_dir[f][static_cast<int>(arche)] + severity * severity_dir[f]);
        }
        enc.embeddings[f] = std::move(emb);
      }
      out.encounters.push_back(std::move(enc));
    }
  }
  return out;
}

}  // namespace trajgp
