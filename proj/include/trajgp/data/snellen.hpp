#pragma once

#include <optional>
#include <span>
#include <string_view>

namespace trajgp {

/// logMAR values assigned to the categorical codes below the Snellen range.
struct SpecialCodes {
  double count_fingers = 1.9;
  double hand_motion = 2.3;
  double light_perception = 2.7;
  double no_light_perception = 3.0;
};

/// "N/D" -> log10(D / N); CF/HM/LP/NLP -> configured constants (case
/// insensitive); "", "-1", "NA", "N/A", "null" -> nullopt.
/// Anything else throws DataError.
std::optional<double> snellen_to_logmar(std::string_view entry, const SpecialCodes& codes = {});

/// Best (minimum) logMAR of a visit. Throws DataError on an empty list.
double aggregate_acuity(std::span<const double> measurements);

}  // namespace trajgp
