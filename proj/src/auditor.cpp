#include "blcm/auditor.hpp"

#include <algorithm>
#include <set>

namespace blcm {

Json AuditVerdict::to_json() const {
  return Json{{"cell", cell.str()},
              {"cycle", cycle},
              {"succession_ok", succession_ok},
              {"report_timely", report_timely},
              {"fingerprint_matches", fingerprint_matches},
              {"details", details}};
}

AuditVerdict AuditVerdict::from_json(const Json& j) {
  try {
    AuditVerdict v;
    v.cell = Address::parse(j.at("cell").get<std::string>());
    v.cycle = j.at("cycle").get<std::int64_t>();
    v.succession_ok = j.at("succession_ok").get<bool>();
    v.report_timely = j.at("report_timely").get<bool>();
    v.fingerprint_matches = j.at("fingerprint_matches").get<bool>();
    v.details = j.value("details", "");
    return v;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("verdict: ") + ex.what());
  }
}

bool audit_succession(const SnapshotArchive& prev, const std::vector<LedgerEntry>& txs, const SnapshotArchive& next,
                      std::string* why) {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  if (prev.recompute() != prev.snapshot) return fail("previous archive does not match its own fingerprints");
  if (next.recompute() != next.snapshot) return fail("archive does not match its own fingerprints");
  if (next.snapshot.cycle <= prev.snapshot.cycle) return fail("snapshots out of order");
  if (next.snapshot.first_seq != prev.snapshot.last_seq + 1)
    return fail("ledger range does not continue from the previous snapshot");
  const auto expected = next.snapshot.last_seq + 1 - next.snapshot.first_seq;
  if (txs.size() != expected)
    return fail("ledger slice holds " + std::to_string(txs.size()) + " entries, snapshot covers " +
                std::to_string(expected));

  auto runtime = Runtime::from_archive(prev.contracts);
  std::set<std::pair<Address, Nonce>> seen;
  for (std::size_t i = 0; i < txs.size(); ++i) {
    const auto& e = txs[i];
    const auto at = "entry " + std::to_string(e.seq) + ": ";
    if (e.seq != next.snapshot.first_seq + i) return fail(at + "sequence gap");
    Address signer;
    try {
      signer = verify_envelope(e.envelope, std::nullopt);
    } catch (const Error& err) {
      return fail(at + err.what());
    }
    if (e.outcome == Outcome::Reverted) continue;
    if (!seen.insert({signer, e.envelope.payload.nonce}).second) return fail(at + "transaction finalized twice");
    ExecResult r;
    try {
      r = runtime->apply(e.envelope);
    } catch (const Error& err) {
      return fail(at + "replay failed: " + err.what());
    }
    if (r.outcome != e.outcome)
      return fail(at + "replay gives " + std::string(outcome_name(r.outcome)) + ", ledger says " +
                  std::string(outcome_name(e.outcome)));
    const auto& contract = e.envelope.payload.recipient;
    if (runtime->has_contract(contract)) {
      if (runtime->version(contract) != e.contract_version) return fail(at + "contract version differs");
      if (runtime->fingerprint(contract) != e.post_fingerprint) return fail(at + "post-state fingerprint differs");
    }
  }
  runtime->on_report_boundary();

  auto replayed = runtime->export_all();
  if (replayed.size() != next.contracts.size()) return fail("replay yields a different set of contracts");
  for (std::size_t i = 0; i < replayed.size(); ++i) {
    auto& mine = replayed[i];
    const auto& theirs = next.contracts[i];
    const auto id = theirs.descriptor.contract_id.str();
    if (!(mine.descriptor == theirs.descriptor)) return fail("contract " + id + ": descriptor differs");
    if (mine.version != theirs.version) return fail("contract " + id + ": version differs");
    if (contract_fingerprint(mine.store) != contract_fingerprint(theirs.store))
      return fail("contract " + id + ": state differs after replay");
    // Exclusion is the cell's own call after a mismatch; carry it over.
    mine.excluded = theirs.excluded;
  }
  auto rebuilt = make_archive(next.cell, next.snapshot.cycle, std::move(replayed), next.snapshot.first_seq,
                              next.snapshot.last_seq);
  if (rebuilt.snapshot.combined != next.snapshot.combined) return fail("combined fingerprint differs after replay");
  return true;
}

AuditVerdict audit_integrity(const Address& cell, std::int64_t cycle, AnchorApi& anchor,
                             const std::optional<SnapshotArchive>& archive, const DeploymentInvariants& inv) {
  AuditVerdict v;
  v.cell = cell;
  v.cycle = cycle;
  std::optional<ReportRecord> report;
  try {
    report = anchor.get_report(cell, cycle);
  } catch (const Error& e) {
    v.details = e.what();
    return v;
  }
  if (!report) {
    v.details = "no report on the anchor";
    return v;
  }
  v.report_timely = report_is_timely(cycle, report->submitted_at, inv);
  if (!v.report_timely) v.details = "report submitted at " + std::to_string(report->submitted_at) + ", after its window";
  if (!archive) {
    v.details += v.details.empty() ? "archive unavailable" : "; archive unavailable";
    return v;
  }
  if (archive->cell != cell || archive->snapshot.cycle != cycle) {
    v.details += v.details.empty() ? "archive is for another cell or cycle" : "; archive is for another cell or cycle";
    return v;
  }
  v.fingerprint_matches = archive->recompute().combined == report->fingerprint;
  if (!v.fingerprint_matches)
    v.details += v.details.empty() ? "reported fingerprint does not match the archive"
                                   : "; reported fingerprint does not match the archive";
  return v;
}

bool deployment_valid(const std::vector<AuditVerdict>& verdicts, const DeploymentInvariants& inv,
                      std::int64_t last_cycle) {
  std::map<Address, std::map<std::int64_t, bool>> ok;
  for (const auto& v : verdicts) {
    auto& slot = ok[v.cell];
    auto [it, inserted] = slot.emplace(v.cycle, v.valid());
    if (!inserted) it->second = it->second && v.valid();
  }
  for (const auto& cell : inv.cell_addresses) {
    auto it = ok.find(cell);
    if (it == ok.end()) continue;
    bool all = true;
    for (std::int64_t c = 0; c <= last_cycle && all; ++c) {
      auto hit = it->second.find(c);
      all = hit != it->second.end() && hit->second;
    }
    if (all) return true;
  }
  return false;
}

// -- Auditor -------------------------------------------------------------------

Auditor::Auditor(DeploymentConfig config, AnchorApi& anchor)
    : config_(std::move(config)), anchor_(anchor), genesis_(genesis_archive(config_.allocation)) {}

void Auditor::add_source(std::shared_ptr<AuditSource> source) { sources_.push_back(std::move(source)); }

AuditVerdict Auditor::audit_one(AuditSource& source, std::int64_t cycle) {
  const auto cell = source.cell();
  std::optional<SnapshotArchive> next;
  std::string fetch_error;
  try {
    next = source.snapshot(cycle);
  } catch (const std::exception& e) {
    fetch_error = e.what();
  }
  auto v = audit_integrity(cell, cycle, anchor_, next, config_.invariants);
  if (!next) {
    v.details += (v.details.empty() ? "" : "; ") + fetch_error;
    previous_.erase(cell);
    return v;
  }

  std::optional<SnapshotArchive> prev;
  if (cycle == 0) {
    prev = genesis_;
  } else if (auto it = previous_.find(cell); it != previous_.end() && it->second.snapshot.cycle == cycle - 1) {
    prev = it->second;
  } else {
    try {
      prev = source.snapshot(cycle - 1);
    } catch (const std::exception&) {
    }
  }
  if (!prev) {
    v.details += (v.details.empty() ? "" : "; ") + std::string("previous snapshot unavailable");
  } else {
    std::string why;
    try {
      auto txs = next->snapshot.last_seq >= next->snapshot.first_seq
                     ? source.ledger(next->snapshot.first_seq, next->snapshot.last_seq)
                     : std::vector<LedgerEntry>{};
      v.succession_ok = audit_succession(*prev, txs, *next, &why);
    } catch (const std::exception& e) {
      why = e.what();
    }
    if (!v.succession_ok) v.details += (v.details.empty() ? "succession: " : "; succession: ") + why;
  }
  previous_.insert_or_assign(cell, std::move(*next));
  return v;
}

std::vector<AuditVerdict> Auditor::audit_cycle(std::int64_t cycle) {
  std::vector<AuditVerdict> out;
  for (const auto& s : sources_) out.push_back(audit_one(*s, cycle));
  verdicts_.insert(verdicts_.end(), out.begin(), out.end());
  last_audited_ = cycle;
  return out;
}

std::vector<AuditVerdict> Auditor::audit_through(std::int64_t last_cycle) {
  std::vector<AuditVerdict> out;
  for (auto c = last_audited_ ? *last_audited_ + 1 : 0; c <= last_cycle; ++c) {
    auto v = audit_cycle(c);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

bool Auditor::deployment_valid() const {
  if (!last_audited_) return false;
  return blcm::deployment_valid(verdicts_, config_.invariants, *last_audited_);
}

}  // namespace blcm
