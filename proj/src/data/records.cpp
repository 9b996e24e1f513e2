#include "trajgp/data/records.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>

namespace trajgp {

using nlohmann::json;

int text_field_index(std::string_view name) {
  for (int i = 0; i < kNumTextFields; ++i) {
    if (name == kTextFields[i]) return i;
  }
  throw DataError("unknown text field '" + std::string(name) + "'");
}

std::optional<double> RawEncounter::target(const SpecialCodes& codes) const {
  std::vector<double> values;
  for (const auto& a : acuity) {
    if (auto v = snellen_to_logmar(a, codes)) values.push_back(*v);
  }
  if (values.empty()) return std::nullopt;
  return aggregate_acuity(values);
}

bool RawEncounter::operator==(const RawEncounter& o) const {
  if (patient_id != o.patient_id || date != o.date || age != o.age || sex != o.sex || race != o.race ||
      ethnicity != o.ethnicity || acuity != o.acuity) {
    return false;
  }
  for (int f = 0; f < kNumTextFields; ++f) {
    const auto& a = embeddings[f];
    const auto& b = o.embeddings[f];
    if (a.has_value() != b.has_value()) return false;
    if (a && (a->size() != b->size() || *a != *b)) return false;
  }
  return true;
}

std::string encounter_to_json_line(const RawEncounter& e) {
  json j;
  j["patient_id"] = e.patient_id;
  j["encounter_date"] = format_date(e.date);
  j["age"] = e.age ? *e.age : -1.0;
  j["sex"] = e.sex;
  j["race"] = e.race;
  j["ethnicity"] = e.ethnicity;
  json emb = json::object();
  for (int f = 0; f < kNumTextFields; ++f) {
    if (e.embeddings[f]) emb[kTextFields[f]] = std::vector<double>(e.embeddings[f]->begin(), e.embeddings[f]->end());
  }
  j["embeddings"] = std::move(emb);
  j["acuity"] = e.acuity;
  return j.dump();
}

RawEncounter encounter_from_json_line(std::string_view line, Eigen::Index embedding_dim, const SpecialCodes& codes) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& ex) {
    throw DataError(std::string("invalid JSON: ") + ex.what());
  }
  if (!j.is_object()) throw DataError("encounter must be a JSON object");
  RawEncounter e;
  try {
    e.patient_id = j.at("patient_id").get<std::string>();
    e.date = parse_date(j.at("encounter_date").get<std::string>());
    if (j.contains("age") && !j["age"].is_null()) {
      const double age = j["age"].get<double>();
      if (age == -1.0) {
        e.age = std::nullopt;
      } else if (age < 0.0 || !std::isfinite(age)) {
        throw DataError("age must be non-negative");
      } else {
        e.age = age;
      }
    }
    e.sex = j.value("sex", "");
    e.race = j.value("race", "");
    e.ethnicity = j.value("ethnicity", "");
    if (j.contains("embeddings") && !j["embeddings"].is_null()) {
      for (const auto& [key, value] : j["embeddings"].items()) {
        const int f = text_field_index(key);
        if (value.is_null() || (value.is_array() && value.empty())) continue;
        const auto vec = value.get<std::vector<double>>();
        if (embedding_dim > 0 && static_cast<Eigen::Index>(vec.size()) != embedding_dim) {
          throw DataError("embedding '" + key + "' has length " + std::to_string(vec.size()) + ", expected " +
                          std::to_string(embedding_dim));
        }
        e.embeddings[f] = Eigen::Map<const Vector>(vec.data(), static_cast<Eigen::Index>(vec.size()));
        if (!e.embeddings[f]->allFinite()) throw DataError("embedding '" + key + "' is not finite");
      }
    }
    if (j.contains("acuity") && !j["acuity"].is_null()) e.acuity = j["acuity"].get<std::vector<std::string>>();
  } catch (const json::exception& ex) {
    throw DataError(std::string("bad field: ") + ex.what());
  }
  e.target(codes);  // validates every acuity entry
  return e;
}

namespace {

void note_error(ReadReport* report, std::size_t line_no, const std::string& what) {
  if (!report) return;
  ++report->skipped;
  if (report->errors.size() < 20) report->errors.push_back("line " + std::to_string(line_no) + ": " + what);
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return in;
}

}  // namespace

std::vector<RawEncounter> read_encounters_jsonl(const std::filesystem::path& path, Eigen::Index embedding_dim,
                                                const SpecialCodes& codes, ReadReport* report) {
  auto in = open_input(path);
  std::vector<RawEncounter> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (report) ++report->rows;
    try {
      out.push_back(encounter_from_json_line(line, embedding_dim, codes));
    } catch (const Error& ex) {
      note_error(report, line_no, ex.what());
    }
  }
  return out;
}

void write_encounters_jsonl(const std::filesystem::path& path, const std::vector<RawEncounter>& encounters) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  for (const auto& e : encounters) out << encounter_to_json_line(e) << '\n';
}

std::vector<RawEncounter> read_encounters_csv(const std::filesystem::path& path, const SpecialCodes& codes,
                                              ReadReport* report) {
  auto in = open_input(path);
  std::vector<RawEncounter> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line_no == 1 && line.rfind("patient_id", 0) == 0) continue;  // header
    if (report) ++report->rows;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(cell);
    if (!line.empty() && line.back() == ',') cols.emplace_back();
    try {
      if (cols.size() != 7) throw DataError("expected 7 columns, found " + std::to_string(cols.size()));
      RawEncounter e;
      e.patient_id = cols[0];
      e.date = parse_date(cols[1]);
      if (!cols[2].empty()) {
        double age = 0.0;
        try {
          age = std::stod(cols[2]);
        } catch (const std::exception&) {
          throw DataError("age '" + cols[2] + "' is not a number");
        }
        if (age != -1.0) {
          if (age < 0.0) throw DataError("age must be non-negative");
          e.age = age;
        }
      }
      e.sex = cols[3];
      e.race = cols[4];
      e.ethnicity = cols[5];
      std::stringstream as(cols[6]);
      std::string a;
      while (std::getline(as, a, ';')) e.acuity.push_back(a);
      e.target(codes);
      out.push_back(std::move(e));
    } catch (const Error& ex) {
      note_error(report, line_no, ex.what());
    }
  }
  return out;
}

std::vector<PatientRecords> group_patients(std::vector<RawEncounter> encounters) {
  std::map<std::string, std::vector<RawEncounter>> by_id;
  for (auto& e : encounters) by_id[e.patient_id].push_back(std::move(e));
  std::vector<PatientRecords> out;
  out.reserve(by_id.size());
  for (auto& [id, list] : by_id) {
    std::stable_sort(list.begin(), list.end(), [](const RawEncounter& a, const RawEncounter& b) {
      return a.date < b.date;
    });
    list.erase(std::unique(list.begin(), list.end(),
                           [](const RawEncounter& a, const RawEncounter& b) { return a.date == b.date; }),
               list.end());
    out.push_back({id, std::move(list)});
  }
  return out;
}

}  // namespace trajgp
