#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace blcm {

enum class ErrorCode {
  Malformed,
  InvalidArgument,
  InvalidKey,
  InvalidPoint,
  Encoding,
  BadSignature,
  SenderMismatch,
  StaleTimestamp,
  UnsortedEntries,
  BeforeGenesis,
  NotADeadline,
  UnknownOpcode,
  ContractRuleViolation,
  DuplicateContract,
  UnknownContract,
  NotSubscribed,
  NotMember,
  NotFound,
  RefcountUnderflow,
  TransactionReverted,
  NotAllowedCell,
  DuplicateReport,
  AnchorUnreachable,
  Unreachable,
  MissingReport,
  ArchiveUnavailable,
  MalformedArchive,
  Conflict,
  StaleVersion,
  Busy,
  Config,
};

constexpr std::string_view error_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::Malformed: return "Malformed";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::InvalidKey: return "InvalidKey";
    case ErrorCode::InvalidPoint: return "InvalidPoint";
    case ErrorCode::Encoding: return "Encoding";
    case ErrorCode::BadSignature: return "BadSignature";
    case ErrorCode::SenderMismatch: return "SenderMismatch";
    case ErrorCode::StaleTimestamp: return "StaleTimestamp";
    case ErrorCode::UnsortedEntries: return "UnsortedEntries";
    case ErrorCode::BeforeGenesis: return "BeforeGenesis";
    case ErrorCode::NotADeadline: return "NotADeadline";
    case ErrorCode::UnknownOpcode: return "UnknownOpcode";
    case ErrorCode::ContractRuleViolation: return "ContractRuleViolation";
    case ErrorCode::DuplicateContract: return "DuplicateContract";
    case ErrorCode::UnknownContract: return "UnknownContract";
    case ErrorCode::NotSubscribed: return "NotSubscribed";
    case ErrorCode::NotMember: return "NotMember";
    case ErrorCode::NotFound: return "NotFound";
    case ErrorCode::RefcountUnderflow: return "RefcountUnderflow";
    case ErrorCode::TransactionReverted: return "TransactionReverted";
    case ErrorCode::NotAllowedCell: return "NotAllowedCell";
    case ErrorCode::DuplicateReport: return "DuplicateReport";
    case ErrorCode::AnchorUnreachable: return "AnchorUnreachable";
    case ErrorCode::Unreachable: return "Unreachable";
    case ErrorCode::MissingReport: return "MissingReport";
    case ErrorCode::ArchiveUnavailable: return "ArchiveUnavailable";
    case ErrorCode::MalformedArchive: return "MalformedArchive";
    case ErrorCode::Conflict: return "Conflict";
    case ErrorCode::StaleVersion: return "StaleVersion";
    case ErrorCode::Busy: return "Busy";
    case ErrorCode::Config: return "Config";
  }
  return "Unknown";
}

inline ErrorCode error_from_name(std::string_view name) {
  for (int i = 0; i <= static_cast<int>(ErrorCode::Config); ++i) {
    auto code = static_cast<ErrorCode>(i);
    if (error_name(code) == name) return code;
  }
  return ErrorCode::Malformed;
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(error_name(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace blcm
