#include "blcm/ledger.hpp"

#include <algorithm>

namespace blcm {

Json LedgerEntry::to_json() const {
  Json j{{"seq", seq},
         {"envelope", envelope_to_json(envelope)},
         {"outcome", outcome_name(outcome)},
         {"cycle", cycle},
         {"contract_version", contract_version},
         {"post_fingerprint", post_fingerprint.hex()},
         {"error", error ? Json(error_name(*error)) : Json(nullptr)},
         {"contingency", contingency_position ? Json(*contingency_position) : Json(nullptr)}};
  return j;
}

LedgerEntry LedgerEntry::from_json(const Json& j) {
  try {
    LedgerEntry e;
    e.seq = j.at("seq").get<std::uint64_t>();
    e.envelope = envelope_from_json(j.at("envelope"));
    e.outcome = parse_outcome(j.at("outcome").get<std::string>());
    e.cycle = j.at("cycle").get<std::int64_t>();
    e.contract_version = j.at("contract_version").get<std::uint64_t>();
    e.post_fingerprint = Digest::from_hex(j.at("post_fingerprint").get<std::string>());
    if (auto it = j.find("error"); it != j.end() && !it->is_null())
      e.error = error_from_name(it->get<std::string>());
    if (auto it = j.find("contingency"); it != j.end() && !it->is_null())
      e.contingency_position = it->get<std::uint64_t>();
    return e;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("ledger entry: ") + ex.what());
  }
}

Ledger::Ledger(std::filesystem::path path) {
  if (std::filesystem::exists(path)) {
    for (auto& e : read_file(path)) {
      latest_by_tx_[{e.envelope.payload.sender, e.envelope.payload.nonce}] = entries_.size();
      entries_.push_back(std::move(e));
    }
  }
  file_.emplace(path, std::ios::app);
  if (!*file_) throw Error(ErrorCode::Config, "cannot open ledger file " + path.string());
}

std::uint64_t Ledger::append(LedgerEntry entry) {
  std::lock_guard lock(mutex_);
  entry.seq = entries_.size() + 1;
  latest_by_tx_[{entry.envelope.payload.sender, entry.envelope.payload.nonce}] = entries_.size();
  if (file_) {
    *file_ << canonical_dump(entry.to_json()) << '\n';
    file_->flush();
  }
  entries_.push_back(std::move(entry));
  return entries_.size();
}

std::uint64_t Ledger::last_seq() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::vector<LedgerEntry> Ledger::slice(std::uint64_t first, std::uint64_t last) const {
  std::lock_guard lock(mutex_);
  std::vector<LedgerEntry> out;
  if (first == 0) first = 1;
  last = std::min<std::uint64_t>(last, entries_.size());
  for (auto s = first; s <= last; ++s) out.push_back(entries_[s - 1]);
  return out;
}

std::vector<LedgerEntry> Ledger::contract_history(const Address& contract, std::uint64_t after_version) const {
  std::lock_guard lock(mutex_);
  std::vector<LedgerEntry> out;
  for (const auto& e : entries_)
    if (e.outcome != Outcome::Reverted && e.envelope.payload.recipient == contract &&
        e.contract_version > after_version)
      out.push_back(e);
  return out;
}

std::optional<LedgerEntry> Ledger::find(const Address& sender, const Nonce& nonce) const {
  std::lock_guard lock(mutex_);
  auto it = latest_by_tx_.find({sender, nonce});
  if (it == latest_by_tx_.end()) return std::nullopt;
  return entries_[it->second];
}

std::vector<LedgerEntry> Ledger::read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::NotFound, "cannot read " + path.string());
  std::vector<LedgerEntry> out;
  for (std::string line; std::getline(in, line);) {
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::exception& ex) {
      throw Error(ErrorCode::Malformed, "ledger file line " + std::to_string(out.size() + 1) + ": " + ex.what());
    }
    out.push_back(LedgerEntry::from_json(j));
    if (out.back().seq != out.size())
      throw Error(ErrorCode::Malformed, "ledger file has a sequence gap at line " + std::to_string(out.size()));
  }
  return out;
}

}  // namespace blcm
