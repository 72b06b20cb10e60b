#pragma once

#include <chrono>
#include <cstdint>
#include <vector>

#include "blcm/protocol.hpp"

namespace blcm {

struct DeploymentIdTag {};
using DeploymentId = FixedBytes<16, DeploymentIdTag>;

/// Parameters fixed for the lifetime of a deployment and shared verbatim by
/// every cell, the anchor and all auditors.
struct DeploymentInvariants {
  DeploymentId deployment_id;
  std::vector<Address> cell_addresses;  // consortium, in configured order
  Timestamp lambda = 60;                // report period, seconds
  Timestamp t0 = 0;                     // first report deadline
  std::chrono::milliseconds delta{2000};  // forwarding deadline
  int miss_threshold = 3;

  /// Throws Config when an invariant is violated.
  void validate() const {
    if (lambda <= 0) throw Error(ErrorCode::Config, "lambda must be positive");
    if (t0 % lambda != 0) throw Error(ErrorCode::Config, "t0 must be divisible by lambda");
    if (cell_addresses.size() < 2 || cell_addresses.size() > 10)
      throw Error(ErrorCode::Config, "consortium must have between 2 and 10 cells");
    if (delta.count() <= 0) throw Error(ErrorCode::Config, "delta must be positive");
    if (miss_threshold < 0) throw Error(ErrorCode::Config, "miss_threshold must be non-negative");
    for (std::size_t i = 0; i < cell_addresses.size(); ++i)
      for (std::size_t j = i + 1; j < cell_addresses.size(); ++j)
        if (cell_addresses[i] == cell_addresses[j])
          throw Error(ErrorCode::Config, "duplicate cell address " + cell_addresses[i].str());
  }

  bool is_cell(const Address& a) const {
    for (const auto& c : cell_addresses)
      if (c == a) return true;
    return false;
  }
};

namespace detail {
constexpr Timestamp floor_div(Timestamp a, Timestamp b) {
  Timestamp q = a / b;
  return (a % b != 0 && ((a < 0) != (b < 0))) ? q - 1 : q;
}
}  // namespace detail

/// Largest multiple of lambda not after `now`.
inline Timestamp last_deadline(Timestamp now, const DeploymentInvariants& inv) {
  if (now < inv.t0) throw Error(ErrorCode::BeforeGenesis, "timestamp precedes t0");
  return detail::floor_div(now, inv.lambda) * inv.lambda;
}

inline Timestamp next_deadline(Timestamp now, const DeploymentInvariants& inv) {
  return last_deadline(now, inv) + inv.lambda;
}

inline std::int64_t cycle_index(Timestamp deadline, const DeploymentInvariants& inv) {
  if (deadline < inv.t0) throw Error(ErrorCode::BeforeGenesis, "deadline precedes t0");
  if (deadline % inv.lambda != 0) throw Error(ErrorCode::NotADeadline, "timestamp is not a multiple of lambda");
  return (deadline - inv.t0) / inv.lambda;
}

inline Timestamp deadline_of_cycle(std::int64_t cycle, const DeploymentInvariants& inv) {
  return inv.t0 + cycle * inv.lambda;
}

/// Snapshot of cycle i must land by the end of cycle i+1 (inclusive).
inline bool report_is_timely(std::int64_t snapshot_cycle, Timestamp submitted_at,
                             const DeploymentInvariants& inv) {
  return submitted_at <= inv.t0 + (snapshot_cycle + 2) * inv.lambda;
}

}  // namespace blcm
