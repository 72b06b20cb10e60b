#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "blcm/error.hpp"

namespace blcm::cost {

inline constexpr std::uint64_t kDefaultGasPerReport = 49193;
inline constexpr std::int64_t kSecondsPerDay = 86400;

struct CellDelay {
  double forward = 0;  // D_i: service cell -> cell i
  double confirm = 0;  // D_i*: cell i -> service cell
};

/// Message sizes of one transaction, in bytes.
struct TxSizes {
  double client_header = 0;   // H_c
  double client_payload = 0;  // P_c
  /// H_i and P_i for the M cells; entry 0 is the service cell.
  std::vector<double> cell_header;
  std::vector<double> cell_payload;
};

struct CostParams {
  std::uint64_t n_tx = 0;     // N
  std::uint64_t n_cells = 1;  // M
  std::uint64_t n_users = 0;  // K
  double d1 = 0;              // client -> service cell
  double dc = 0;              // service cell -> client
  std::vector<CellDelay> per_cell_delays;
  TxSizes sizes;
  double footprint = 0;       // U_i, bytes per transaction
  double compute_per_tx = 0;  // C_i
  std::uint64_t gas_per_report = kDefaultGasPerReport;
  std::int64_t lambda = 3600;
  double gas_price = 0;    // tokens per gas unit
  double token_price = 0;  // currency per token
};

struct CostResult {
  double l_delay = 0;
  double l_data = 0;
  double l_storage = 0;
  double l_compute = 0;
  std::uint64_t l_fee_gas_per_day = 0;
  double l_fee_currency_per_day = 0;
};

inline void check_params(const CostParams& p) {
  if (p.d1 < 0 || p.dc < 0 || p.footprint < 0 || p.compute_per_tx < 0 || p.gas_price < 0 || p.token_price < 0)
    throw Error(ErrorCode::InvalidArgument, "cost parameters must be non-negative");
  for (const auto& d : p.per_cell_delays)
    if (d.forward < 0 || d.confirm < 0) throw Error(ErrorCode::InvalidArgument, "delays must be non-negative");
}

/// N * (D_1 + max_i (D_i + D_i*) + D_c); the slowest peer bounds each transaction.
inline double estimate_delay(const CostParams& p) {
  check_params(p);
  if (p.per_cell_delays.empty() && p.n_cells > 1)
    throw Error(ErrorCode::InvalidArgument, "per-cell delays are required with more than one cell");
  double slowest = 0;
  for (const auto& d : p.per_cell_delays) slowest = std::max(slowest, d.forward + d.confirm);
  return static_cast<double>(p.n_tx) * (p.d1 + slowest + p.dc);
}

/// Bytes on the wire for N transactions: the client's request, one forward
/// and one confirmation per peer, and the receipt carrying all M confirmations.
inline double estimate_comm(const CostParams& p) {
  check_params(p);
  const auto m = p.n_cells;
  if (p.sizes.cell_header.size() < m || p.sizes.cell_payload.size() < m)
    throw Error(ErrorCode::InvalidArgument, "header and payload sizes are required for every cell");
  const double request = p.sizes.client_header + p.sizes.client_payload;
  const double forwards = static_cast<double>(m - 1) * request +
                          (m > 1 ? static_cast<double>(m - 1) * p.sizes.cell_header[0] : 0.0);
  double confirms = 0;
  double receipt = 0;
  for (std::uint64_t i = 0; i < m; ++i) {
    if (i > 0) confirms += p.sizes.cell_header[i] + p.sizes.cell_payload[i];
    receipt += p.sizes.cell_header[i] + p.sizes.cell_payload[i];
  }
  // H_c + P_c + (M-1)(H_1 + H_c + P_c) + sum_{i>=2}(H_i + P_i) + sum_{i>=1}(H_i + P_i)
  return static_cast<double>(p.n_tx) * (request + forwards + confirms + receipt);
}

/// Every transaction's footprint is held by M cells across three snapshots.
inline double estimate_storage(const CostParams& p) {
  check_params(p);
  return 3.0 * static_cast<double>(p.n_cells) * static_cast<double>(p.n_tx) * p.footprint;
}

/// Each of the K auditors and M cells executes every transaction once.
inline double estimate_compute(const CostParams& p) {
  check_params(p);
  return static_cast<double>(p.n_users + p.n_cells) * static_cast<double>(p.n_tx) * p.compute_per_tx;
}

struct FeeEstimate {
  std::uint64_t gas_per_day = 0;
  double currency_per_day = 0;
};

/// Reports per day times the gas of one report. `gas_price` is in token units
/// per gas (e.g. 22e-9 for 22 GWei), `token_price` in currency per token.
inline FeeEstimate estimate_fees(std::int64_t report_period, std::uint64_t gas_per_report = kDefaultGasPerReport,
                                 double gas_price = 0, double token_price = 0) {
  if (report_period <= 0) throw Error(ErrorCode::InvalidArgument, "report period must be positive");
  if (gas_price < 0 || token_price < 0) throw Error(ErrorCode::InvalidArgument, "prices must be non-negative");
  FeeEstimate f;
  f.gas_per_day = static_cast<std::uint64_t>(kSecondsPerDay / report_period) * gas_per_report;
  f.currency_per_day = static_cast<double>(f.gas_per_day) * gas_price * token_price;
  return f;
}

inline CostResult estimate_all(const CostParams& p) {
  CostResult r;
  r.l_delay = estimate_delay(p);
  r.l_data = estimate_comm(p);
  r.l_storage = estimate_storage(p);
  r.l_compute = estimate_compute(p);
  auto fees = estimate_fees(p.lambda, p.gas_per_report, p.gas_price, p.token_price);
  r.l_fee_gas_per_day = fees.gas_per_day;
  r.l_fee_currency_per_day = fees.currency_per_day;
  return r;
}

}  // namespace blcm::cost
