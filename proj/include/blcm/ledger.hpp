#pragma once

#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <vector>

#include "blcm/runtime.hpp"

namespace blcm {

struct LedgerEntry {
  std::uint64_t seq = 0;
  Envelope envelope;
  Outcome outcome = Outcome::Accepted;
  std::int64_t cycle = 0;
  /// Contract version after this entry; unchanged for reverted entries.
  std::uint64_t contract_version = 0;
  /// Contract fingerprint after this entry.
  Digest post_fingerprint;
  std::optional<ErrorCode> error;
  /// Position on the anchor's contingency queue, when injected from there.
  std::optional<std::uint64_t> contingency_position;

  Json to_json() const;
  static LedgerEntry from_json(const Json& j);
  bool operator==(const LedgerEntry&) const = default;
};

/// Append-only transaction log with gapless sequence numbers starting at 1.
class Ledger {
 public:
  Ledger() = default;
  /// Appends are mirrored to `path`, one canonical record per line.
  explicit Ledger(std::filesystem::path path);

  /// Assigns the next seq and returns it.
  std::uint64_t append(LedgerEntry entry);

  std::uint64_t last_seq() const;
  /// Entries with first <= seq <= last.
  std::vector<LedgerEntry> slice(std::uint64_t first, std::uint64_t last) const;
  /// Finalized entries for one contract whose version is above `after_version`.
  std::vector<LedgerEntry> contract_history(const Address& contract, std::uint64_t after_version) const;
  std::optional<LedgerEntry> find(const Address& sender, const Nonce& nonce) const;

  static std::vector<LedgerEntry> read_file(const std::filesystem::path& path);

 private:
  mutable std::mutex mutex_;
  std::vector<LedgerEntry> entries_;
  std::map<std::pair<Address, Nonce>, std::size_t> latest_by_tx_;
  std::optional<std::ofstream> file_;
};

}  // namespace blcm
