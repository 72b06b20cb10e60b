#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "blcm/timing.hpp"

namespace blcm {

/// Deployment file shared by every cell, the anchor and auditors.
///
/// Plain `key = value` lines; `#` starts a comment. Repeated keys:
///
///     deployment_id = 5f2c...            (32 hex digits)
///     lambda = 60
///     t0 = 1700000040
///     delta_ms = 2000
///     miss_threshold = 3
///     skew = 300
///     retention = 3
///     anchor = 0x<address> http://127.0.0.1:7000
///     cell = 0x<address> http://127.0.0.1:7001      (one per cell, ordered)
///     allocation = 0x<address> 1000                 (FastMoney genesis)
///     subscribe = 0x<cell> *|0x<client>             (omit for open access)
struct DeploymentConfig {
  DeploymentInvariants invariants;
  Address anchor_address;
  std::string anchor_url;
  std::map<Address, std::string> cell_urls;  // mutable, not an invariant
  std::vector<std::pair<Address, std::uint64_t>> allocation;
  Timestamp skew = kDefaultSkewSeconds;
  std::size_t snapshot_retention = 3;
  /// Per-cell allowlist; a cell without an entry serves everyone.
  std::map<Address, std::set<Address>> subscriptions;
  std::set<Address> open_cells;

  static DeploymentConfig parse(std::string_view text);
  static DeploymentConfig load(const std::filesystem::path& path);
  std::string serialize() const;
  void save(const std::filesystem::path& path) const;

  bool is_subscribed(const Address& cell, const Address& client) const;
  std::size_t cell_index(const Address& cell) const;
};

}  // namespace blcm
