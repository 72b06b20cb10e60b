#include "blcm/anchor.hpp"

#include <algorithm>
#include <mutex>

namespace blcm {

Json ReportRecord::to_json() const {
  return Json{{"cell", cell.str()},
              {"cycle", cycle},
              {"fingerprint", fingerprint.hex()},
              {"submitted_at", submitted_at}};
}

ReportRecord ReportRecord::from_json(const Json& j) {
  try {
    ReportRecord r;
    r.cell = Address::parse(j.at("cell").get<std::string>());
    r.cycle = j.at("cycle").get<std::int64_t>();
    r.fingerprint = Digest::from_hex(j.at("fingerprint").get<std::string>());
    r.submitted_at = j.at("submitted_at").get<Timestamp>();
    return r;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("report record: ") + ex.what());
  }
}

Json report_data(std::int64_t cycle, const Digest& fingerprint) {
  return Json{{"cycle", cycle}, {"fingerprint", fingerprint.hex()}};
}

Anchor::Anchor(std::vector<Address> allowed_cells, const Clock& clock, std::optional<std::filesystem::path> log_path)
    : allowed_(std::move(allowed_cells)), clock_(clock) {
  if (!log_path) return;
  if (std::filesystem::exists(*log_path)) {
    std::ifstream in(*log_path);
    std::size_t line_no = 0;
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (line.empty()) continue;
      try {
        auto j = Json::parse(line);
        auto kind = j.at("kind").get<std::string>();
        if (kind == "report") {
          auto r = ReportRecord::from_json(j.at("record"));
          reports_.emplace(std::pair{r.cell, r.cycle}, r);
          fees_.push_back({r.cell, r.cycle, kGasPerReport});
        } else if (kind == "contingency") {
          contingency_.push_back({contingency_.size() + 1, envelope_from_json(j.at("envelope"))});
        }
      } catch (const std::exception& ex) {
        throw Error(ErrorCode::Malformed, "anchor log line " + std::to_string(line_no) + ": " + ex.what());
      }
    }
  }
  log_.emplace(*log_path, std::ios::app);
  if (!*log_) throw Error(ErrorCode::Config, "cannot open anchor log " + log_path->string());
}

void Anchor::persist(const Json& record) {
  if (!log_) return;
  *log_ << canonical_dump(record) << '\n';
  log_->flush();
}

ReportRecord Anchor::submit_report(const Address& cell, std::int64_t cycle, const Digest& fingerprint,
                                   Timestamp now) {
  if (std::find(allowed_.begin(), allowed_.end(), cell) == allowed_.end())
    throw Error(ErrorCode::NotAllowedCell, cell.str());
  std::unique_lock lock(mutex_);
  ReportRecord r{cell, cycle, fingerprint, now};
  auto [it, inserted] = reports_.emplace(std::pair{cell, cycle}, r);
  if (!inserted)
    throw Error(ErrorCode::DuplicateReport, cell.str() + " already reported cycle " + std::to_string(cycle));
  fees_.push_back({cell, cycle, kGasPerReport});
  persist(Json{{"kind", "report"}, {"record", r.to_json()}});
  return r;
}

ReportRecord Anchor::submit_report(const Envelope& signed_report) {
  if (signed_report.payload.opcode != Opcode::ReportSubmit)
    throw Error(ErrorCode::InvalidArgument, "expected a REPORT_SUBMIT envelope");
  auto cell = verify_envelope(signed_report, std::nullopt);
  const auto& data = signed_report.payload.data;
  std::int64_t cycle = 0;
  Digest fp;
  try {
    cycle = data.at("cycle").get<std::int64_t>();
    fp = Digest::from_hex(data.at("fingerprint").get<std::string>());
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("report data: ") + ex.what());
  }
  return submit_report(cell, cycle, fp, clock_.now());
}

std::optional<ReportRecord> Anchor::get_report(const Address& cell, std::int64_t cycle) {
  std::shared_lock lock(mutex_);
  auto it = reports_.find({cell, cycle});
  if (it == reports_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Anchor::submit_contingency(const Envelope& tx) {
  verify_envelope(tx, std::nullopt);
  std::unique_lock lock(mutex_);
  contingency_.push_back({contingency_.size() + 1, tx});
  persist(Json{{"kind", "contingency"}, {"envelope", envelope_to_json(tx)}});
  return contingency_.size();
}

std::vector<ContingencyItem> Anchor::fetch_contingency(std::uint64_t since) {
  std::shared_lock lock(mutex_);
  std::vector<ContingencyItem> out;
  for (auto p = since; p < contingency_.size(); ++p) out.push_back(contingency_[p]);
  return out;
}

std::vector<ReportRecord> Anchor::reports() const {
  std::shared_lock lock(mutex_);
  std::vector<ReportRecord> out;
  for (const auto& [_, r] : reports_) out.push_back(r);
  return out;
}

std::vector<FeeEntry> Anchor::fee_log() const {
  std::shared_lock lock(mutex_);
  return fees_;
}

}  // namespace blcm
