#include "trajgp/extractors/cyclical.hpp"

#include "trajgp/common.hpp"

#include <charconv>
#include <cmath>
#include <numbers>

namespace trajgp {
namespace {

int parse_int(std::string_view s, std::string_view whole) {
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw DataError("unparseable date '" + std::string(whole) + "'");
  }
  return v;
}

}  // namespace

Date parse_date(std::string_view text) {
  std::string_view s = text.substr(0, text.find_first_of("T "));
  if (s.size() != 10 || s[4] != '-' || s[7] != '-') {
    throw DataError("unparseable date '" + std::string(text) + "', expected YYYY-MM-DD");
  }
  const Date d{std::chrono::year(parse_int(s.substr(0, 4), text)),
               std::chrono::month(static_cast<unsigned>(parse_int(s.substr(5, 2), text))),
               std::chrono::day(static_cast<unsigned>(parse_int(s.substr(8, 2), text)))};
  if (!d.ok()) throw DataError("invalid calendar date '" + std::string(text) + "'");
  return d;
}

std::string format_date(const Date& d) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(d.year()),
                static_cast<unsigned>(d.month()), static_cast<unsigned>(d.day()));
  return buf;
}

long days_since_epoch(const Date& d) {
  return static_cast<long>(std::chrono::sys_days(d).time_since_epoch().count());
}

Date date_from_days(long days) { return Date(std::chrono::sys_days(std::chrono::days(days))); }

std::pair<double, double> cyclical_pair(double index, double period) {
  const double angle = 2.0 * std::numbers::pi * index / period;
  return {std::sin(angle), std::cos(angle)};
}

std::array<double, 6> cyclical_encode(const Date& d) {
  if (!d.ok()) throw DataError("cyclical_encode: invalid date");
  const auto [ds, dc] = cyclical_pair(static_cast<unsigned>(d.day()) - 1.0, kDayPeriod);
  const auto [ms, mc] = cyclical_pair(static_cast<unsigned>(d.month()) - 1.0, kMonthPeriod);
  int year = static_cast<int>(d.year());
  const auto [ys, yc] = cyclical_pair(static_cast<double>(((year % 10) + 10) % 10), kYearPeriod);
  return {ds, dc, ms, mc, ys, yc};
}

}  // namespace trajgp
