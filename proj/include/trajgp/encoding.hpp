#pragma once

#include <string>
#include <string_view>

namespace trajgp {

std::string base64_encode(std::string_view bytes);
/// Throws DataError on malformed input.
std::string base64_decode(std::string_view text);

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view bytes);

}  // namespace trajgp
