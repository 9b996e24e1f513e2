#include "trajgp/data/features.hpp"

#include <nlohmann/json.hpp>

namespace trajgp {

using nlohmann::json;

std::string FeatureLayout::column_name(Eigen::Index i) const {
  static const char* kCyc[] = {"day_sin", "day_cos", "month_sin", "month_cos", "year_sin", "year_cos"};
  if (i < 0 || i >= dim()) throw ShapeError("column index " + std::to_string(i) + " out of range");
  if (i == age_index()) return "age";
  if (i < 7) return kCyc[i - 1];
  if (i < presence_index(0)) {
    const Eigen::Index f = (i - 7) / embedding_dim;
    return std::string("emb.") + kTextFields[f] + "[" + std::to_string((i - 7) % embedding_dim) + "]";
  }
  return std::string("present.") + kTextFields[i - presence_index(0)];
}

bool NormStats::operator==(const NormStats& o) const {
  return age_mean == o.age_mean && age_std == o.age_std && embedding_mean == o.embedding_mean &&
         embedding_std == o.embedding_std;
}

NormStats compute_stats(const std::vector<const RawEncounter*>& records, const FeatureLayout& layout) {
  const Eigen::Index e = layout.embedding_dim;
  NormStats s;
  s.embedding_mean = Matrix::Zero(kNumTextFields, e);
  s.embedding_std = Matrix::Ones(kNumTextFields, e);
  // Two passes in fixed record order keep the reduction deterministic.
  double age_sum = 0.0;
  std::size_t age_n = 0;
  Matrix sum = Matrix::Zero(kNumTextFields, e);
  std::array<std::size_t, kNumTextFields> count{};
  for (const RawEncounter* r : records) {
    if (r->age) {
      age_sum += *r->age;
      ++age_n;
    }
    for (int f = 0; f < kNumTextFields; ++f) {
      if (!r->embeddings[f]) continue;
      if (r->embeddings[f]->size() != e) throw DataError("embedding length mismatch in training data");
      sum.row(f) += r->embeddings[f]->transpose();
      ++count[f];
    }
  }
  if (age_n > 0) s.age_mean = age_sum / static_cast<double>(age_n);
  for (int f = 0; f < kNumTextFields; ++f) {
    if (count[f] > 0) s.embedding_mean.row(f) = sum.row(f) / static_cast<double>(count[f]);
  }
  double age_sq = 0.0;
  Matrix sq = Matrix::Zero(kNumTextFields, e);
  for (const RawEncounter* r : records) {
    if (r->age) age_sq += (*r->age - s.age_mean) * (*r->age - s.age_mean);
    for (int f = 0; f < kNumTextFields; ++f) {
      if (r->embeddings[f]) sq.row(f) += (r->embeddings[f]->transpose() - s.embedding_mean.row(f)).array().square().matrix();
    }
  }
  if (age_n > 1) s.age_std = std::sqrt(age_sq / static_cast<double>(age_n - 1));
  if (!(s.age_std > 0.0)) s.age_std = 1.0;
  for (int f = 0; f < kNumTextFields; ++f) {
    if (count[f] < 2) continue;
    for (Eigen::Index k = 0; k < e; ++k) {
      const double sd = std::sqrt(sq(f, k) / static_cast<double>(count[f] - 1));
      s.embedding_std(f, k) = sd > 0.0 ? sd : 1.0;
    }
  }
  return s;
}

json stats_to_json(const NormStats& s) {
  json j;
  j["age_mean"] = s.age_mean;
  j["age_std"] = s.age_std;
  json mean = json::object();
  json sd = json::object();
  for (int f = 0; f < kNumTextFields; ++f) {
    mean[kTextFields[f]] = std::vector<double>(s.embedding_mean.row(f).begin(), s.embedding_mean.row(f).end());
    sd[kTextFields[f]] = std::vector<double>(s.embedding_std.row(f).begin(), s.embedding_std.row(f).end());
  }
  j["embedding_mean"] = std::move(mean);
  j["embedding_std"] = std::move(sd);
  return j;
}

NormStats stats_from_json(const json& j) {
  NormStats s;
  try {
    s.age_mean = j.at("age_mean").get<double>();
    s.age_std = j.at("age_std").get<double>();
    for (int f = 0; f < kNumTextFields; ++f) {
      const auto m = j.at("embedding_mean").at(kTextFields[f]).get<std::vector<double>>();
      const auto d = j.at("embedding_std").at(kTextFields[f]).get<std::vector<double>>();
      if (f == 0) {
        s.embedding_mean.resize(kNumTextFields, static_cast<Eigen::Index>(m.size()));
        s.embedding_std.resize(kNumTextFields, static_cast<Eigen::Index>(m.size()));
      }
      if (static_cast<Eigen::Index>(m.size()) != s.embedding_mean.cols() || d.size() != m.size()) {
        throw DataError("normalization statistics have inconsistent embedding widths");
      }
      for (std::size_t k = 0; k < m.size(); ++k) {
        s.embedding_mean(f, static_cast<Eigen::Index>(k)) = m[k];
        s.embedding_std(f, static_cast<Eigen::Index>(k)) = d[k];
      }
    }
  } catch (const json::exception& ex) {
    throw DataError(std::string("malformed normalization statistics: ") + ex.what());
  }
  return s;
}

EncodedRecord assemble_features(const RawEncounter& raw, const NormStats& stats, const FeatureLayout& layout,
                                const SpecialCodes& codes) {
  const Eigen::Index e = layout.embedding_dim;
  if (stats.embedding_mean.cols() != e) throw ShapeError("normalization statistics do not match the layout");
  EncodedRecord out;
  out.date = raw.date;
  out.target = raw.target(codes);
  out.features = Vector::Zero(layout.dim());
  if (raw.age) out.features(FeatureLayout::age_index()) = (*raw.age - stats.age_mean) / stats.age_std;
  const auto cyc = cyclical_encode(raw.date);
  for (int k = 0; k < 6; ++k) out.features(FeatureLayout::cyclical_offset() + k) = cyc[k];
  for (int f = 0; f < kNumTextFields; ++f) {
    const auto& emb = raw.embeddings[f];
    if (!emb) continue;
    if (emb->size() != e) {
      throw DataError(std::string("embedding '") + kTextFields[f] + "' has length " + std::to_string(emb->size()) +
                      ", expected " + std::to_string(e));
    }
    out.features.segment(layout.embedding_offset(f), e) =
        ((emb->transpose() - stats.embedding_mean.row(f)).array() / stats.embedding_std.row(f).array()).transpose();
    out.features(layout.presence_index(f)) = 1.0;
  }
  return out;
}

std::vector<Eigen::Index> feature_group_columns(const FeatureLayout& layout, std::string_view group) {
  if (group == "AGE") return {FeatureLayout::age_index()};
  const char* field = nullptr;
  if (group == "MED_NAME") field = "medications";
  else if (group == "SURGERIES" || group == "PROC_NAME") field = "procedures";
  else if (group == "VISIT_TYPE") field = "visit_type";
  else if (group == "DX_NAME") field = "diagnoses";
  else if (group == "SPECIALTY") field = "specialty";
  else if (group == "REASON_FOR_VISIT") field = "reason";
  else if (group == "LAB_RESULTS") field = "lab_results";
  if (!field) {
    std::string valid;
    for (const char* g : kFeatureGroups) valid += (valid.empty() ? "" : ", ") + std::string(g);
    throw ConfigError("unknown feature group '" + std::string(group) + "' (valid: " + valid + ")");
  }
  const int f = text_field_index(field);
  std::vector<Eigen::Index> cols;
  for (Eigen::Index k = 0; k < layout.embedding_dim; ++k) cols.push_back(layout.embedding_offset(f) + k);
  cols.push_back(layout.presence_index(f));
  return cols;
}

}  // namespace trajgp
