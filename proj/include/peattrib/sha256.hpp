#pragma once

#include <cstdint>
#include <span>
#include <string>

namespace peattrib {

// Lowercase hex SHA-256 of `bytes`. Content hashes are the sample identity
// used for dedup, manifest ordering, and dataset row ordering.
std::string sha256_hex(std::span<const uint8_t> bytes);

}  // namespace peattrib
