#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <shared_mutex>
#include <vector>

#include "blcm/clock.hpp"
#include "blcm/protocol.hpp"

namespace blcm {

inline constexpr std::uint64_t kGasPerReport = 49193;

struct ReportRecord {
  Address cell;
  std::int64_t cycle = 0;
  Digest fingerprint;
  Timestamp submitted_at = 0;

  Json to_json() const;
  static ReportRecord from_json(const Json& j);
  bool operator==(const ReportRecord&) const = default;
};

struct FeeEntry {
  Address cell;
  std::int64_t cycle = 0;
  std::uint64_t gas = 0;
};

struct ContingencyItem {
  std::uint64_t position = 0;  // 1-based, gapless
  Envelope envelope;
};

/// Data of a REPORT_SUBMIT envelope.
Json report_data(std::int64_t cycle, const Digest& fingerprint);

/// What cells and auditors need from the public ledger. Implemented by the
/// in-process Anchor and by the HTTP client.
class AnchorApi {
 public:
  virtual ~AnchorApi() = default;
  /// `signed_report` is a REPORT_SUBMIT envelope from the reporting cell.
  virtual ReportRecord submit_report(const Envelope& signed_report) = 0;
  virtual std::optional<ReportRecord> get_report(const Address& cell, std::int64_t cycle) = 0;
  virtual std::uint64_t submit_contingency(const Envelope& tx) = 0;
  /// Items with position > since, in append order.
  virtual std::vector<ContingencyItem> fetch_contingency(std::uint64_t since) = 0;
};

/// Stand-in for the public smart contract: a fixed cell set, write-once
/// reports keyed by (cell, cycle), and the contingency queue.
class Anchor final : public AnchorApi {
 public:
  Anchor(std::vector<Address> allowed_cells, const Clock& clock,
         std::optional<std::filesystem::path> log_path = std::nullopt);

  ReportRecord submit_report(const Address& cell, std::int64_t cycle, const Digest& fingerprint, Timestamp now);
  ReportRecord submit_report(const Envelope& signed_report) override;
  std::optional<ReportRecord> get_report(const Address& cell, std::int64_t cycle) override;
  std::uint64_t submit_contingency(const Envelope& tx) override;
  std::vector<ContingencyItem> fetch_contingency(std::uint64_t since) override;

  const std::vector<Address>& allowed_cells() const { return allowed_; }
  std::vector<ReportRecord> reports() const;
  std::vector<FeeEntry> fee_log() const;

 private:
  void persist(const Json& record);

  const std::vector<Address> allowed_;
  const Clock& clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<Address, std::int64_t>, ReportRecord> reports_;
  std::vector<ContingencyItem> contingency_;
  std::vector<FeeEntry> fees_;
  std::optional<std::ofstream> log_;
};

}  // namespace blcm
