#pragma once

#include "blcm/bytes.hpp"

namespace blcm {

/// Original Keccak-256 (pad byte 0x01), as used for Ethereum addresses.
/// Not FIPS-202 SHA3-256, which pads with 0x06.
Digest keccak256(ByteView data);

inline Digest keccak256(std::string_view text) { return keccak256(as_bytes(text)); }

}  // namespace blcm
