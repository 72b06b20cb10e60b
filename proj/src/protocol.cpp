#include "blcm/protocol.hpp"

#include <openssl/rand.h>

#include <array>

namespace blcm {
namespace {

constexpr std::array<std::pair<Opcode, std::string_view>, 16> kOpcodeNames = {{
    {Opcode::TxCommit, "TX_COMMIT"},
    {Opcode::TxForward, "TX_FORWARD"},
    {Opcode::TxConfirm, "TX_CONFIRM"},
    {Opcode::TxDecide, "TX_DECIDE"},
    {Opcode::Deploy, "DEPLOY"},
    {Opcode::CasPut, "CAS_PUT"},
    {Opcode::CasGet, "CAS_GET"},
    {Opcode::SnapshotGet, "SNAPSHOT_GET"},
    {Opcode::FingerprintGet, "FINGERPRINT_GET"},
    {Opcode::Status, "STATUS"},
    {Opcode::LedgerGet, "LEDGER_GET"},
    {Opcode::StateGet, "STATE_GET"},
    {Opcode::ReportSubmit, "REPORT_SUBMIT"},
    {Opcode::ReportGet, "REPORT_GET"},
    {Opcode::ContingencySubmit, "CONTINGENCY_SUBMIT"},
    {Opcode::ContingencyGet, "CONTINGENCY_GET"},
}};

void reject_floats(const Json& value) {
  switch (value.type()) {
    case Json::value_t::number_float:
      throw Error(ErrorCode::Encoding, "floating-point values have no canonical form");
    case Json::value_t::binary:
      throw Error(ErrorCode::Encoding, "binary values must be hex-encoded");
    case Json::value_t::discarded:
      throw Error(ErrorCode::Encoding, "discarded value");
    case Json::value_t::object:
    case Json::value_t::array:
      for (const auto& child : value) reject_floats(child);
      break;
    default:
      break;
  }
}

std::string require_string(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string())
    throw Error(ErrorCode::Malformed, std::string("missing string field '") + key + "'");
  return it->get<std::string>();
}

}  // namespace

std::string_view opcode_name(Opcode op) {
  for (const auto& [code, name] : kOpcodeNames)
    if (code == op) return name;
  return "UNKNOWN";
}

Opcode parse_opcode(std::string_view name) {
  for (const auto& [code, n] : kOpcodeNames)
    if (n == name) return code;
  throw Error(ErrorCode::UnknownOpcode, std::string(name));
}

Address derive_address(const PublicKey& public_key) {
  secp256k1::validate_public(public_key);
  auto hash = keccak256(ByteView(public_key.data(), public_key.size()));
  return Address::from_span(hash.view().subspan(12));
}

KeyPair KeyPair::from_private(const PrivateKey& key) {
  KeyPair kp;
  kp.private_key = key;
  kp.public_key = secp256k1::derive_public(key);
  kp.address = derive_address(kp.public_key);
  return kp;
}

KeyPair KeyPair::generate() { return from_private(secp256k1::random_private_key()); }

KeyPair KeyPair::from_hex(std::string_view private_hex) {
  auto raw = blcm::from_hex(private_hex);
  if (raw.size() != 32) throw Error(ErrorCode::InvalidKey, "private key must be 32 bytes");
  PrivateKey key{};
  std::copy(raw.begin(), raw.end(), key.begin());
  return from_private(key);
}

Nonce random_nonce() {
  Nonce n;
  if (RAND_bytes(n.raw().data(), static_cast<int>(Nonce::size_bytes)) != 1)
    throw Error(ErrorCode::InvalidArgument, "RAND_bytes failed");
  return n;
}

std::string canonical_dump(const Json& value) {
  reject_floats(value);
  try {
    return value.dump(-1, ' ', false, Json::error_handler_t::strict);
  } catch (const Json::exception& e) {
    throw Error(ErrorCode::Encoding, e.what());
  }
}

Json payload_to_json(const Payload& p) {
  if (!p.data.is_object()) throw Error(ErrorCode::Encoding, "payload data must be a map");
  Json j = Json::object();
  j["sender"] = p.sender.str();
  j["recipient"] = p.recipient.str();
  j["opcode"] = opcode_name(p.opcode);
  j["nonce"] = p.nonce.hex();
  j["reply_to"] = p.reply_to ? Json(p.reply_to->hex()) : Json(nullptr);
  j["timestamp"] = p.timestamp;
  j["data"] = p.data;
  return j;
}

Payload payload_from_json(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Malformed, "payload must be a map");
  Payload p;
  p.sender = Address::parse(require_string(j, "sender"));
  p.recipient = Address::parse(require_string(j, "recipient"));
  p.opcode = parse_opcode(require_string(j, "opcode"));
  p.nonce = Nonce::from_hex(require_string(j, "nonce"));
  auto rt = j.find("reply_to");
  if (rt != j.end() && !rt->is_null()) {
    if (!rt->is_string()) throw Error(ErrorCode::Malformed, "reply_to must be hex");
    p.reply_to = Nonce::from_hex(rt->get<std::string>());
  }
  auto ts = j.find("timestamp");
  if (ts == j.end() || !ts->is_number_integer())
    throw Error(ErrorCode::Malformed, "timestamp must be an integer");
  p.timestamp = ts->get<Timestamp>();
  auto data = j.find("data");
  if (data == j.end() || !data->is_object()) throw Error(ErrorCode::Malformed, "data must be a map");
  p.data = *data;
  return p;
}

std::string canonical_encode(const Payload& payload) { return canonical_dump(payload_to_json(payload)); }

Payload decode_payload(std::string_view text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Malformed, "payload is not valid text encoding");
  return payload_from_json(j);
}

Json envelope_to_json(const Envelope& e) {
  return Json{{"payload", payload_to_json(e.payload)},
              {"signature", to_hex(ByteView(e.signature.data(), e.signature.size()))}};
}

Envelope envelope_from_json(const Json& j) {
  if (!j.is_object() || !j.contains("payload"))
    throw Error(ErrorCode::Malformed, "envelope must carry a payload");
  Envelope e;
  e.payload = payload_from_json(j.at("payload"));
  auto sig = from_hex(require_string(j, "signature"));
  if (sig.size() != e.signature.size()) throw Error(ErrorCode::BadSignature, "signature must be 65 bytes");
  std::copy(sig.begin(), sig.end(), e.signature.begin());
  return e;
}

std::string encode_envelope(const Envelope& envelope) { return canonical_dump(envelope_to_json(envelope)); }

Envelope decode_envelope(std::string_view text) {
  Json j = Json::parse(text, nullptr, false);
  if (j.is_discarded()) throw Error(ErrorCode::Malformed, "envelope is not valid text encoding");
  return envelope_from_json(j);
}

Digest signing_hash(const Payload& payload) { return keccak256(canonical_encode(payload)); }

Envelope sign_envelope(Payload payload, const KeyPair& key) {
  Envelope e;
  e.signature = secp256k1::sign(signing_hash(payload), key.private_key);
  e.payload = std::move(payload);
  return e;
}

Envelope make_envelope(const KeyPair& key, const Address& recipient, Opcode opcode, Json data,
                       Timestamp now, std::optional<Nonce> reply_to) {
  Payload p;
  p.sender = key.address;
  p.recipient = recipient;
  p.opcode = opcode;
  p.nonce = random_nonce();
  p.reply_to = reply_to;
  p.timestamp = now;
  p.data = std::move(data);
  return sign_envelope(std::move(p), key);
}

Address verify_envelope(const Envelope& envelope, std::optional<Timestamp> now, Timestamp skew) {
  PublicKey recovered;
  try {
    recovered = secp256k1::recover(signing_hash(envelope.payload), envelope.signature);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::Encoding) throw;
    throw Error(ErrorCode::BadSignature, e.what());
  }
  Address signer = derive_address(recovered);
  if (signer != envelope.payload.sender)
    throw Error(ErrorCode::SenderMismatch,
                "signed by " + signer.str() + ", claims " + envelope.payload.sender.str());
  if (now) {
    Timestamp drift = envelope.payload.timestamp - *now;
    if (drift > skew || drift < -skew)
      throw Error(ErrorCode::StaleTimestamp, "timestamp outside skew window");
  }
  return signer;
}

Digest fingerprint_bytes(ByteView data) { return keccak256(data); }

Digest combine_fingerprints(std::span<const FingerprintEntry> entries) {
  Bytes buf;
  buf.reserve(entries.size() * (Address::size_bytes + Digest::size_bytes));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    if (i > 0 && !(entries[i - 1].contract_id < entries[i].contract_id))
      throw Error(ErrorCode::UnsortedEntries, "entries must be strictly ascending by contract id");
    auto id = entries[i].contract_id.view();
    auto d = entries[i].digest.view();
    buf.insert(buf.end(), id.begin(), id.end());
    buf.insert(buf.end(), d.begin(), d.end());
  }
  return fingerprint_bytes(buf);
}

}  // namespace blcm
