#include "trajgp/data/snellen.hpp"

#include "trajgp/common.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <string>

namespace trajgp {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::string upper(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return out;
}

bool parse_positive(std::string_view s, long& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size() && out > 0;
}

}  // namespace

std::optional<double> snellen_to_logmar(std::string_view entry, const SpecialCodes& codes) {
  const std::string_view t = trim(entry);
  const std::string u = upper(t);
  if (u.empty() || u == "-1" || u == "NA" || u == "N/A" || u == "NULL") return std::nullopt;
  if (u == "CF") return codes.count_fingers;
  if (u == "HM") return codes.hand_motion;
  if (u == "LP") return codes.light_perception;
  if (u == "NLP") return codes.no_light_perception;
  const auto slash = t.find('/');
  long num = 0;
  long den = 0;
  if (slash == std::string_view::npos || !parse_positive(trim(t.substr(0, slash)), num) ||
      !parse_positive(trim(t.substr(slash + 1)), den)) {
    throw DataError("unrecognized visual acuity entry '" + std::string(entry) + "'");
  }
  return std::log10(static_cast<double>(den) / static_cast<double>(num));
}

double aggregate_acuity(std::span<const double> measurements) {
  if (measurements.empty()) throw DataError("aggregate_acuity: no measurements");
  return *std::min_element(measurements.begin(), measurements.end());
}

}  // namespace trajgp
