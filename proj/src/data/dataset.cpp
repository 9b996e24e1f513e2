#include "trajgp/data/dataset.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <random>
#include <set>

namespace trajgp {

using nlohmann::json;

SplitIds split_patients(std::vector<std::string> ids, std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw DataError("split_patients: duplicate ids");
  const std::size_t n = ids.size();
  if (n < 10) throw DataError("split_patients: need at least 10 patients, got " + std::to_string(n));
  std::mt19937_64 rng(derive_seed(seed, "split"));
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto n_val = static_cast<std::size_t>(std::llround(0.2 * static_cast<double>(n)));
  SplitIds s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train),
               ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), ids.end());
  return s;
}

SplitIds Dataset::split_ids() const {
  SplitIds s;
  for (const auto& p : train) s.train.push_back(p.patient_id);
  for (const auto& p : val) s.val.push_back(p.patient_id);
  for (const auto& p : test) s.test.push_back(p.patient_id);
  return s;
}

PatientSequence encode_patient(const PatientRecords& patient, const NormStats& stats, const FeatureLayout& layout,
                               const SpecialCodes& codes) {
  PatientSequence seq;
  seq.patient_id = patient.patient_id;
  const auto t = static_cast<Eigen::Index>(patient.encounters.size());
  seq.features.resize(t, layout.dim());
  seq.targets.resize(t);
  for (Eigen::Index i = 0; i < t; ++i) {
    EncodedRecord r = assemble_features(patient.encounters[static_cast<std::size_t>(i)], stats, layout, codes);
    seq.features.row(i) = r.features.transpose();
    seq.targets(i) = r.target ? *r.target : std::numeric_limits<double>::quiet_NaN();
    seq.dates.push_back(r.date);
  }
  return seq;
}

Dataset build_dataset(std::vector<RawEncounter> encounters, const PreprocessConfig& config) {
  std::vector<PatientRecords> patients = group_patients(std::move(encounters));
  std::vector<std::string> ids;
  for (const auto& p : patients) ids.push_back(p.patient_id);
  const SplitIds split = split_patients(ids, config.split_seed);
  const std::set<std::string> train_ids(split.train.begin(), split.train.end());
  const std::set<std::string> val_ids(split.val.begin(), split.val.end());

  std::vector<const RawEncounter*> train_records;
  for (const auto& p : patients) {
    if (!train_ids.count(p.patient_id)) continue;
    for (const auto& e : p.encounters) train_records.push_back(&e);
  }
  Dataset d;
  d.layout = config.layout;
  d.codes = config.codes;
  d.stats = compute_stats(train_records, config.layout);
  for (const auto& p : patients) {
    PatientSequence seq = encode_patient(p, d.stats, d.layout, d.codes);
    if (train_ids.count(p.patient_id)) d.train.push_back(std::move(seq));
    else if (val_ids.count(p.patient_id)) d.val.push_back(std::move(seq));
    else d.test.push_back(std::move(seq));
  }
  return d;
}

namespace {

const char* kSplits[] = {"train", "val", "test"};

std::vector<PatientSequence>& split_ref(Dataset& d, int i) { return i == 0 ? d.train : i == 1 ? d.val : d.test; }
const std::vector<PatientSequence>& split_ref(const Dataset& d, int i) {
  return i == 0 ? d.train : i == 1 ? d.val : d.test;
}

void write_le_doubles(std::ofstream& out, const double* data, std::size_t n) {
  static_assert(std::numeric_limits<double>::is_iec559);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits;
    std::memcpy(&bits, data + i, sizeof bits);
    unsigned char b[8];
    for (int k = 0; k < 8; ++k) b[k] = static_cast<unsigned char>(bits >> (8 * k));
    out.write(reinterpret_cast<const char*>(b), 8);
  }
}

void read_le_doubles(std::ifstream& in, double* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    unsigned char b[8];
    if (!in.read(reinterpret_cast<char*>(b), 8)) throw DataError("dataset shard is truncated");
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(b[k]) << (8 * k);
    std::memcpy(data + i, &bits, sizeof bits);
  }
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& ex) {
    throw DataError("malformed JSON in '" + path.string() + "': " + ex.what());
  }
}

}  // namespace

void save_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json manifest;
  manifest["format"] = "trajgp-dataset-1";
  manifest["embedding_dim"] = data.layout.embedding_dim;
  manifest["feature_dim"] = data.layout.dim();
  manifest["special_codes"] = {{"CF", data.codes.count_fingers},
                               {"HM", data.codes.hand_motion},
                               {"LP", data.codes.light_perception},
                               {"NLP", data.codes.no_light_perception}};
  for (int s = 0; s < 3; ++s) {
    std::ofstream shard(dir / (std::string(kSplits[s]) + ".bin"), std::ios::binary);
    if (!shard) throw DataError("cannot write dataset shard in '" + dir.string() + "'");
    json patients = json::array();
    for (const auto& p : split_ref(data, s)) {
      json jp;
      jp["patient_id"] = p.patient_id;
      jp["rows"] = p.length();
      std::vector<std::string> dates;
      for (const auto& d : p.dates) dates.push_back(format_date(d));
      jp["dates"] = dates;
      json targets = json::array();
      for (Eigen::Index i = 0; i < p.length(); ++i) {
        targets.push_back(p.has_target(i) ? json(p.targets(i)) : json(nullptr));
      }
      jp["targets"] = std::move(targets);
      patients.push_back(std::move(jp));
      write_le_doubles(shard, p.features.data(), static_cast<std::size_t>(p.features.size()));
    }
    manifest["splits"][kSplits[s]] = std::move(patients);
  }
  std::ofstream(dir / "manifest.json") << manifest.dump(1) << '\n';
  std::ofstream(dir / "stats.json") << stats_to_json(data.stats).dump(1) << '\n';
}

Dataset load_dataset(const std::filesystem::path& dir) {
  const json manifest = read_json_file(dir / "manifest.json");
  Dataset d;
  try {
    if (manifest.at("format").get<std::string>() != "trajgp-dataset-1") throw DataError("unknown dataset format");
    d.layout.embedding_dim = manifest.at("embedding_dim").get<Eigen::Index>();
    const auto& codes = manifest.at("special_codes");
    d.codes = {codes.at("CF").get<double>(), codes.at("HM").get<double>(), codes.at("LP").get<double>(),
               codes.at("NLP").get<double>()};
    d.stats = stats_from_json(read_json_file(dir / "stats.json"));
    for (int s = 0; s < 3; ++s) {
      std::ifstream shard(dir / (std::string(kSplits[s]) + ".bin"), std::ios::binary);
      if (!shard) throw DataError("missing dataset shard '" + std::string(kSplits[s]) + ".bin'");
      for (const auto& jp : manifest.at("splits").at(kSplits[s])) {
        PatientSequence p;
        p.patient_id = jp.at("patient_id").get<std::string>();
        const auto rows = jp.at("rows").get<Eigen::Index>();
        p.features.resize(rows, d.layout.dim());
        read_le_doubles(shard, p.features.data(), static_cast<std::size_t>(p.features.size()));
        for (const auto& ds : jp.at("dates")) p.dates.push_back(parse_date(ds.get<std::string>()));
        p.targets.resize(rows);
        const auto& targets = jp.at("targets");
        if (static_cast<Eigen::Index>(targets.size()) != rows || static_cast<Eigen::Index>(p.dates.size()) != rows) {
          throw DataError("manifest row counts disagree for patient '" + p.patient_id + "'");
        }
        for (Eigen::Index i = 0; i < rows; ++i) {
          const auto& t = targets[static_cast<std::size_t>(i)];
          p.targets(i) = t.is_null() ? std::numeric_limits<double>::quiet_NaN() : t.get<double>();
        }
        split_ref(d, s).push_back(std::move(p));
      }
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed dataset manifest: ") + ex.what());
  }
  return d;
}

std::vector<SampleRef> enumerate_samples(const std::vector<PatientSequence>& sequences) {
  std::vector<SampleRef> out;
  for (std::size_t p = 0; p < sequences.size(); ++p) {
    for (Eigen::Index i = 0; i < sequences[p].length(); ++i) {
      if (sequences[p].has_target(i)) out.push_back({p, i + 1});
    }
  }
  return out;
}

Vector sample_targets(const std::vector<PatientSequence>& sequences, const std::vector<SampleRef>& samples) {
  Vector y(static_cast<Eigen::Index>(samples.size()));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    y(static_cast<Eigen::Index>(i)) = sequences[samples[i].patient].targets(samples[i].length - 1);
  }
  return y;
}

void ablate_group(Dataset& data, std::string_view group) {
  const auto cols = feature_group_columns(data.layout, group);
  for (int s = 0; s < 3; ++s) {
    for (auto& p : split_ref(data, s)) {
      for (Eigen::Index c : cols) p.features.col(c).setZero();
    }
  }
}

}  // namespace trajgp
