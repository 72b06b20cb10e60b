#pragma once

#include <filesystem>
#include <vector>

#include "blcm/runtime.hpp"

namespace blcm {

struct Snapshot {
  std::int64_t cycle = 0;
  std::vector<FingerprintEntry> entries;  // ascending by contract_id
  Digest combined;
  /// Ledger entries first_seq..last_seq lead from the previous snapshot to
  /// this one; the range is empty when last_seq < first_seq.
  std::uint64_t first_seq = 1;
  std::uint64_t last_seq = 0;

  Json to_json() const;
  static Snapshot from_json(const Json& j);
  bool operator==(const Snapshot&) const = default;
};

/// Everything an auditor needs to check one snapshot: the fingerprints plus
/// the frozen stores they were computed from.
struct SnapshotArchive {
  Address cell;
  Snapshot snapshot;
  std::vector<Runtime::ArchivedContract> contracts;  // ascending by contract_id

  Json to_json() const;
  static SnapshotArchive from_json(const Json& j);
  std::string encode() const;
  static SnapshotArchive decode(std::string_view text);

  /// Recomputes every fingerprint from the stores; excluded contracts are
  /// left out of the combined digest.
  Snapshot recompute() const;

  /// One file per contract plus a manifest holding the snapshot header.
  void write_directory(const std::filesystem::path& dir) const;
  static SnapshotArchive read_directory(const std::filesystem::path& dir);
};

/// Builds the archive for `cycle` from a runtime's contracts. Fingerprint
/// entries cover non-excluded contracts only.
SnapshotArchive make_archive(const Address& cell, std::int64_t cycle, std::vector<Runtime::ArchivedContract> contracts,
                             std::uint64_t first_seq, std::uint64_t last_seq);

/// The state every deployment starts from, labelled cycle -1.
SnapshotArchive genesis_archive(const std::vector<std::pair<Address, std::uint64_t>>& allocation);

}  // namespace blcm
