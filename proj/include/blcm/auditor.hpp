#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "blcm/anchor.hpp"
#include "blcm/config.hpp"
#include "blcm/ledger.hpp"
#include "blcm/snapshot.hpp"

namespace blcm {

struct AuditVerdict {
  Address cell;
  std::int64_t cycle = 0;
  bool succession_ok = false;
  bool report_timely = false;
  bool fingerprint_matches = false;
  std::string details;

  bool valid() const { return succession_ok && report_timely && fingerprint_matches; }
  Json to_json() const;
  static AuditVerdict from_json(const Json& j);
  bool operator==(const AuditVerdict&) const = default;
};

/// Replays `txs` over the state of `prev` and checks that the result is
/// exactly `next`. `why` receives the first discrepancy.
bool audit_succession(const SnapshotArchive& prev, const std::vector<LedgerEntry>& txs, const SnapshotArchive& next,
                      std::string* why = nullptr);

/// Compares the anchor's record for (cell, cycle) against the archive the
/// cell serves. A missing report counts as neither timely nor matching; a
/// missing archive leaves fingerprint_matches false.
AuditVerdict audit_integrity(const Address& cell, std::int64_t cycle, AnchorApi& anchor,
                             const std::optional<SnapshotArchive>& archive, const DeploymentInvariants& inv);

/// True iff some consortium cell has a fully valid verdict for every cycle
/// 0..last_cycle. Missing verdicts count as failures.
bool deployment_valid(const std::vector<AuditVerdict>& verdicts, const DeploymentInvariants& inv,
                      std::int64_t last_cycle);

/// Where an auditor downloads a cell's public data from.
class AuditSource {
 public:
  virtual ~AuditSource() = default;
  virtual Address cell() const = 0;
  /// Throws ArchiveUnavailable when the cell cannot serve the snapshot.
  virtual SnapshotArchive snapshot(std::int64_t cycle) = 0;
  virtual std::vector<LedgerEntry> ledger(std::uint64_t first, std::uint64_t last) = 0;
};

/// Audits every cell cycle by cycle, keeping the last verified archive of
/// each cell so that cells only need to retain a few snapshots.
class Auditor {
 public:
  Auditor(DeploymentConfig config, AnchorApi& anchor);

  void add_source(std::shared_ptr<AuditSource> source);
  /// Audits (cell, cycle) for every source; cycles must be audited in order.
  std::vector<AuditVerdict> audit_cycle(std::int64_t cycle);
  /// Audits all cycles after the last audited one up to `last_cycle`.
  std::vector<AuditVerdict> audit_through(std::int64_t last_cycle);

  const std::vector<AuditVerdict>& verdicts() const { return verdicts_; }
  std::optional<std::int64_t> last_audited() const { return last_audited_; }
  bool deployment_valid() const;

 private:
  AuditVerdict audit_one(AuditSource& source, std::int64_t cycle);

  DeploymentConfig config_;
  AnchorApi& anchor_;
  SnapshotArchive genesis_;
  std::vector<std::shared_ptr<AuditSource>> sources_;
  std::map<Address, SnapshotArchive> previous_;
  std::vector<AuditVerdict> verdicts_;
  std::optional<std::int64_t> last_audited_;
};

}  // namespace blcm
