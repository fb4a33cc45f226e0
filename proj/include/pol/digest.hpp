#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "pol/data.hpp"

namespace pol {

using Digest32 = std::array<std::uint8_t, 32>;

Digest32 sha256_bytes(const std::uint8_t* data, std::size_t len);
Digest32 sha256_bytes(const std::vector<std::uint8_t>& data);

std::string to_hex(const Digest32& d);
Digest32 digest_from_hex(const std::string& hex);

// SHA-256 over the batch's canonical byte string: for each row, the d
// features as f64 little-endian followed by the label as i64
// little-endian. Any single-bit change to a covered value changes the
// digest.
Digest32 batch_digest(const Dataset& d, const BatchIndex& batch);

inline bool verify_signature(const Dataset& d, const BatchIndex& batch, const Digest32& expected) {
    return batch_digest(d, batch) == expected;
}

}  // namespace pol
