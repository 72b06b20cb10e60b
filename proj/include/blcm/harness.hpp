#pragma once

#include <chrono>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "blcm/auditor.hpp"
#include "blcm/cell.hpp"
#include "blcm/http.hpp"

namespace blcm {

// -- client helpers ------------------------------------------------------------

Envelope make_transfer(const KeyPair& from, const Address& to, std::uint64_t amount, Timestamp now,
                       const Address& contract = system_contracts::genesis_fastmoney_id());
Envelope make_cas_put(const KeyPair& from, std::string_view blob, Timestamp now);
Envelope make_cas_ref(const KeyPair& from, std::string_view op, const Digest& hash, Timestamp now);
Envelope make_deploy(const KeyPair& from, std::string_view logic, std::string_view salt, bool destroyable,
                     const Store& initial, Timestamp now);

/// Fresh random client keys and a genesis allocation giving each `amount` coins.
std::vector<KeyPair> make_clients(std::size_t n);
std::vector<std::pair<Address, std::uint64_t>> allocation_for(const std::vector<KeyPair>& clients,
                                                              std::uint64_t amount);

// -- deployments ---------------------------------------------------------------

struct ConsortiumOptions {
  std::size_t size = 2;
  Timestamp lambda = 60;
  /// First deadline; zero means the next multiple of lambda after now.
  Timestamp t0 = 0;
  std::chrono::milliseconds delta{2000};
  int miss_threshold = 3;
  std::size_t retention = 3;
  std::vector<std::pair<Address, std::uint64_t>> allocation;
  /// Serve every cell and the anchor over HTTP on localhost.
  bool http = false;
  std::string host = "127.0.0.1";
  int base_port = 0;  // 0 picks free ports
  /// Emulated one-way delay between cells, and between clients and cells.
  std::chrono::microseconds cell_link_delay{};
  std::chrono::microseconds client_link_delay{};
  std::shared_ptr<Clock> clock;  // defaults to the system clock
  CellOptions cell_options;
  /// Where the deployment file, keys, ledgers and anchor log are written.
  std::optional<std::filesystem::path> data_dir;
  /// Run report stages on the clock's real deadlines.
  bool schedule = false;
};

/// A running deployment: M cells plus one anchor, in this process.
class Consortium {
 public:
  static std::unique_ptr<Consortium> spawn(ConsortiumOptions options);
  ~Consortium();
  Consortium(const Consortium&) = delete;
  Consortium& operator=(const Consortium&) = delete;

  std::size_t size() const { return cells_.size(); }
  const DeploymentConfig& config() const { return config_; }
  const Clock& clock() const { return *clock_; }
  /// Null unless the deployment runs on a ManualClock.
  ManualClock* manual_clock() const { return dynamic_cast<ManualClock*>(clock_.get()); }
  Cell& cell(std::size_t i) { return *cells_.at(i); }
  std::shared_ptr<Cell> cell_ptr(std::size_t i) { return cells_.at(i); }
  const KeyPair& cell_key(std::size_t i) const { return keys_.at(i); }
  Anchor& anchor() { return *anchor_; }
  std::string cell_url(std::size_t i) const;
  std::string anchor_url() const;

  /// Client-side submission to cell i, over HTTP when the deployment serves it.
  Receipt submit(std::size_t i, const Envelope& tx);
  /// Puts a transaction on the anchor's contingency queue.
  std::uint64_t escape(const Envelope& tx);

  /// Runs the report stage on every cell that is not offline for the
  /// deadline of `cycle`, then lets each cell pull contingency work.
  void run_stage(std::int64_t cycle);
  void inject_fault(std::size_t i, Fault fault);
  /// Waits until every cell has applied all decided transactions.
  bool settle(std::chrono::milliseconds timeout = std::chrono::seconds(30));

  std::vector<std::shared_ptr<AuditSource>> audit_sources();

  void set_cell_link_delay(std::chrono::microseconds d);
  void set_client_link_delay(std::chrono::microseconds d) { client_link_delay_ = d; }

  void stop();

 private:
  Consortium() = default;

  ConsortiumOptions options_;
  DeploymentConfig config_;
  std::shared_ptr<Clock> clock_;
  std::vector<KeyPair> keys_;
  std::shared_ptr<Anchor> anchor_;
  std::unique_ptr<AnchorServer> anchor_server_;
  std::unique_ptr<LocalNetwork> local_net_;
  std::vector<std::unique_ptr<PeerTransport>> http_nets_;
  std::vector<std::unique_ptr<AnchorApi>> anchor_clients_;
  std::vector<std::shared_ptr<Cell>> cells_;
  std::vector<std::unique_ptr<CellServer>> servers_;
  std::chrono::microseconds client_link_delay_{};
};

/// Audit source backed by a cell object in this process.
std::shared_ptr<AuditSource> local_audit_source(std::shared_ptr<Cell> cell);
/// Audit source that downloads over HTTP.
std::shared_ptr<AuditSource> http_audit_source(const Address& cell, std::string url);

/// Rebuilds the archives a cell should have produced from its ledger, one
/// per snapshot header, starting from the genesis state.
std::vector<SnapshotArchive> replay_archives(const DeploymentConfig& config, const Address& cell,
                                             const std::vector<LedgerEntry>& ledger,
                                             const std::vector<Snapshot>& headers);

// -- load ------------------------------------------------------------------------

struct LoadProfile {
  enum class Mode { Sequential, Simultaneous };
  std::size_t n_clients = 100;
  std::size_t n_tx = 500;
  Mode mode = Mode::Sequential;
  std::string contract = "fastmoney";  // or "cas"
  std::size_t concurrency = 64;        // simultaneous mode only
  /// Resubmit a reverted transaction this many times before counting a failure.
  int retries = 5;
  bool verify_receipts = true;
};

struct TxSample {
  std::size_t index = 0;
  std::size_t cell = 0;
  double latency = 0;  // seconds
  std::string outcome;
  std::string revert_reason;
  int attempts = 1;
};

struct LatencyStats {
  std::vector<TxSample> samples;
  double p50 = 0, p90 = 0, p99 = 0;
  double elapsed = 0;
  double throughput = 0;  // accepted per second
  std::size_t accepted = 0;
  std::size_t failures = 0;
  std::size_t invalid_receipts = 0;

  Json summary() const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Nearest-rank percentile of `values` (q in [0, 1]).
double percentile(std::vector<double> values, double q);

/// One funded key per client. FastMoney loads transfer one coin from a random
/// client to a fresh random account; CAS loads upload a fresh random blob.
using Submitter = std::function<Receipt(std::size_t cell, const Envelope& tx)>;
LatencyStats run_load(const LoadProfile& profile, std::size_t n_cells, const std::vector<KeyPair>& clients,
                      const Submitter& submit, const Clock& clock, const DeploymentInvariants& inv);

}  // namespace blcm
