#pragma once

#include "blcm/bytes.hpp"

namespace blcm {

using PrivateKey = std::array<std::uint8_t, 32>;
/// Uncompressed point without the 0x04 prefix: X || Y, big-endian.
using PublicKey = std::array<std::uint8_t, 64>;
/// r || s || v, with v in {0, 1} and s normalized to the lower half order.
using RecoverableSignature = std::array<std::uint8_t, 65>;

namespace secp256k1 {

/// Throws InvalidKey unless 0 < key < n.
PublicKey derive_public(const PrivateKey& key);

/// Throws InvalidPoint if the point does not lie on the curve.
void validate_public(const PublicKey& point);

/// Deterministic (RFC 6979, HMAC-SHA256) recoverable ECDSA over a 32-byte digest.
RecoverableSignature sign(const Digest& message_hash, const PrivateKey& key);

/// Returns the public key that produced `signature` over `message_hash`;
/// throws BadSignature if no valid key can be recovered.
PublicKey recover(const Digest& message_hash, const RecoverableSignature& signature);

PrivateKey random_private_key();

}  // namespace secp256k1
}  // namespace blcm
