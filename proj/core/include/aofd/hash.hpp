#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>

namespace aofd {

// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(std::span<const double> values);

}  // namespace aofd
