#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "blcm/bytes.hpp"
#include "blcm/keccak.hpp"
#include "blcm/secp256k1.hpp"

namespace blcm {

using Json = nlohmann::json;
using Timestamp = std::int64_t;

/// Message operation codes. The set is a deployment constant shared by cells,
/// the anchor, clients and auditors.
enum class Opcode {
  TxCommit,
  TxForward,
  TxConfirm,
  TxDecide,
  Deploy,
  CasPut,
  CasGet,
  SnapshotGet,
  FingerprintGet,
  Status,
  LedgerGet,
  StateGet,
  ReportSubmit,
  ReportGet,
  ContingencySubmit,
  ContingencyGet,
};

std::string_view opcode_name(Opcode op);
Opcode parse_opcode(std::string_view name);

struct KeyPair {
  PrivateKey private_key{};
  PublicKey public_key{};
  Address address;

  static KeyPair generate();
  static KeyPair from_private(const PrivateKey& key);
  static KeyPair from_hex(std::string_view private_hex);
};

/// Ethereum-style address: the trailing 20 bytes of Keccak-256 over the
/// 64-byte uncompressed point.
Address derive_address(const PublicKey& public_key);

Nonce random_nonce();

struct Payload {
  Address sender;
  Address recipient;
  Opcode opcode = Opcode::Status;
  Nonce nonce;
  std::optional<Nonce> reply_to;
  Timestamp timestamp = 0;
  Json data = Json::object();

  bool operator==(const Payload&) const = default;
};

struct Envelope {
  Payload payload;
  RecoverableSignature signature{};

  bool operator==(const Envelope&) const = default;
};

/// Sorted-key compact JSON text. Floating-point numbers are rejected because
/// their textual form is not stable across implementations.
std::string canonical_dump(const Json& value);

std::string canonical_encode(const Payload& payload);
Payload decode_payload(std::string_view text);
Json payload_to_json(const Payload& payload);
Payload payload_from_json(const Json& j);

/// Wire form: canonical text of {"payload": ..., "signature": hex}.
std::string encode_envelope(const Envelope& envelope);
Envelope decode_envelope(std::string_view text);
Json envelope_to_json(const Envelope& envelope);
Envelope envelope_from_json(const Json& j);

Digest signing_hash(const Payload& payload);

Envelope sign_envelope(Payload payload, const KeyPair& key);

/// Builds and signs a fresh message from `key` with a random nonce.
Envelope make_envelope(const KeyPair& key, const Address& recipient, Opcode opcode, Json data,
                       Timestamp now, std::optional<Nonce> reply_to = std::nullopt);

inline constexpr Timestamp kDefaultSkewSeconds = 300;

/// Recovers the signer. Throws BadSignature, SenderMismatch or StaleTimestamp.
/// Pass `now = std::nullopt` to skip the freshness check (archived messages).
Address verify_envelope(const Envelope& envelope, std::optional<Timestamp> now,
                        Timestamp skew = kDefaultSkewSeconds);

Digest fingerprint_bytes(ByteView data);
inline Digest fingerprint_bytes(std::string_view text) { return fingerprint_bytes(as_bytes(text)); }

struct FingerprintEntry {
  Address contract_id;
  Digest digest;

  bool operator==(const FingerprintEntry&) const = default;
};

/// Hash over contract_id || digest pairs. Entries must be strictly ascending
/// by contract_id; throws UnsortedEntries otherwise.
Digest combine_fingerprints(std::span<const FingerprintEntry> entries);

}  // namespace blcm
