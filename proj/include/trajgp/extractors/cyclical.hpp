#pragma once

#include <array>
#include <chrono>
#include <string>
#include <string_view>
#include <utility>

namespace trajgp {

using Date = std::chrono::year_month_day;

/// Parses an ISO "YYYY-MM-DD" date (a trailing time part is ignored).
/// Throws DataError when the text is not a valid calendar date.
Date parse_date(std::string_view text);
std::string format_date(const Date& d);

/// Days since 1970-01-01.
long days_since_epoch(const Date& d);
Date date_from_days(long days);

/// (sin 2*pi*index/period, cos 2*pi*index/period).
std::pair<double, double> cyclical_pair(double index, double period);

inline constexpr double kDayPeriod = 31.0;
inline constexpr double kMonthPeriod = 12.0;
inline constexpr double kYearPeriod = 10.0;

/// [day_sin, day_cos, month_sin, month_cos, year_sin, year_cos] using
/// zero-based day-of-month, zero-based month and year-within-decade.
std::array<double, 6> cyclical_encode(const Date& d);

}  // namespace trajgp
