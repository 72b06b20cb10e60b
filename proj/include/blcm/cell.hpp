#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <shared_mutex>
#include <thread>

#include "blcm/anchor.hpp"
#include "blcm/clock.hpp"
#include "blcm/config.hpp"
#include "blcm/ledger.hpp"
#include "blcm/snapshot.hpp"
#include "blcm/transport.hpp"

namespace blcm {

enum class FaultBehavior {
  None,
  Delay,       // sleep before answering forwards
  Tamper,      // report a digest that does not match the archive
  Perturb,     // confirm forwards with a wrong fingerprint
  Censor,      // refuse client commits (optionally from one sender)
  Offline,     // refuse every request
  LateReport,  // hold anchor reports until their window has closed
};

std::string_view fault_name(FaultBehavior b);
FaultBehavior parse_fault(std::string_view name);

struct Fault {
  FaultBehavior behavior = FaultBehavior::None;
  std::chrono::milliseconds delay{0};
  std::optional<Address> target;
  std::optional<std::chrono::steady_clock::time_point> until;
};

/// Data of a TX_CONFIRM sent by a cell that prepared a transaction.
struct Confirmation {
  Address cell;
  Address tx_sender;
  Nonce tx_nonce;
  Address contract;
  Outcome outcome = Outcome::Accepted;
  Digest fingerprint;
  std::uint64_t base_version = 0;

  Json to_json() const;
  /// Parses the envelope's data; the signature is not checked here.
  static Confirmation from_envelope(const Envelope& env);
};

struct Receipt {
  Address service_cell;
  Address tx_sender;
  Nonce tx_nonce;
  Address contract;
  Outcome outcome = Outcome::Reverted;
  std::string revert_reason;  // deadline, mismatch, conflict, ...
  Json result = Json::object();
  std::optional<ErrorCode> error;
  std::vector<Envelope> confirmations;

  Json to_json() const;
  static Receipt from_json(const Json& j);
};

/// Checks a receipt without contacting any cell: every confirmation is signed
/// by a distinct consortium cell for this transaction, the service cell's own
/// confirmation is present, and accepted receipts agree on one fingerprint.
bool verify_receipt(const Receipt& receipt, const DeploymentInvariants& inv, std::string* why = nullptr);

struct CellStatus {
  Address cell;
  int consecutive_misses = 0;
  std::optional<std::int64_t> excluded_until_cycle;
};

struct CellOptions {
  /// How long a prepared peer waits for the service cell's decision; zero
  /// means four times delta.
  std::chrono::milliseconds decision_timeout{0};
  /// How long a client transaction may queue behind others on its contract.
  std::chrono::milliseconds local_wait{30000};
  /// Submit reports from a background thread instead of inline.
  bool async_reports = true;
  std::optional<std::filesystem::path> ledger_path;
  std::optional<std::filesystem::path> archive_dir;
};

/// One consortium cell: executes transactions with its peers, takes a
/// snapshot at every report deadline and reports it to the anchor.
class Cell : public std::enable_shared_from_this<Cell> {
 public:
  Cell(DeploymentConfig config, KeyPair key, const Clock& clock, PeerTransport& transport, AnchorApi& anchor,
       CellOptions options = {});
  ~Cell();
  Cell(const Cell&) = delete;
  Cell& operator=(const Cell&) = delete;

  const Address& address() const { return key_.address; }
  const KeyPair& key() const { return key_; }
  const DeploymentConfig& config() const { return config_; }

  /// Client entry point (TX_COMMIT, DEPLOY, CAS_PUT).
  Receipt handle_commit(const Envelope& tx);
  /// Peer entry point; returns this cell's signed TX_CONFIRM.
  Envelope handle_forward(const Envelope& fwd);
  void handle_decide(const Envelope& decision);

  /// Takes snapshot S_i for the deadline `now` and queues its report.
  ReportRecord run_report_stage(Timestamp now);
  /// Attempts every queued report now; returns how many remain queued.
  std::size_t retry_reports();
  std::size_t pending_reports() const;

  /// Fetches new contingency transactions and executes the ones this cell drives.
  std::vector<Envelope> pull_contingency();

  void record_miss(const Address& cell);
  void record_success(const Address& cell);
  bool is_excluded(const Address& cell, std::int64_t cycle) const;
  CellStatus status_of(const Address& cell) const;

  std::int64_t current_cycle() const;
  std::optional<SnapshotArchive> archive(std::int64_t cycle) const;
  std::optional<std::int64_t> latest_snapshot_cycle() const;
  std::vector<LedgerEntry> ledger_slice(std::uint64_t first, std::uint64_t last) const;
  std::vector<LedgerEntry> contract_history(const Address& contract, std::uint64_t after_version) const;
  const Runtime& runtime() const { return *runtime_; }
  const Ledger& ledger() const { return *ledger_; }
  Json status() const;

  void inject_fault(Fault fault);
  void clear_fault();
  Fault fault() const;

  /// Waits until no background send is running and no prepared forward is
  /// waiting for its decision. Returns false on timeout.
  bool wait_idle(std::chrono::milliseconds timeout) const;
  /// Transactions queued or running on `contract`, including the one in progress.
  std::size_t queue_depth(const Address& contract) const;

  /// Runs report stages at real deadlines of the configured clock.
  void start();
  void stop();

  /// Called while the report stage still holds back new work; tests use it to
  /// land transactions in the middle of a stage.
  void set_stage_hook(std::function<void()> hook);

 private:
  struct Ticket;
  using TicketPtr = std::shared_ptr<Ticket>;
  struct PeerAttempt;
  struct PendingReport {
    std::int64_t cycle = 0;
    Digest fingerprint;
  };
  using TxKey = std::pair<Address, Nonce>;

  // scheduling
  TicketPtr admit(const Address& contract, int kind, std::optional<std::pair<Timestamp, Nonce>> priority,
                  std::optional<Address> origin = std::nullopt);
  bool wait_turn(const TicketPtr& t, std::chrono::steady_clock::time_point deadline);
  bool wait_gate(const TicketPtr& t, std::chrono::steady_clock::time_point deadline);
  void release(const TicketPtr& t);

  Receipt execute_as_service(const Envelope& tx, std::optional<std::uint64_t> contingency);
  void finalize(const Envelope& tx, const PreparedExecution& prepared, Outcome outcome,
                std::optional<std::uint64_t> contingency, std::optional<ErrorCode> error);
  Envelope sign_confirmation(const Envelope& tx, Outcome outcome, const Digest& fingerprint,
                             std::uint64_t base_version, const Nonce& reply_to);
  Receipt receipt_from_ledger(const LedgerEntry& entry);
  void finish_attempt(const std::shared_ptr<PeerAttempt>& attempt, bool commit);
  bool sync_contract(const Address& from, const Address& contract);
  void send_decisions(const std::vector<Address>& peers, Envelope decision);
  void spawn(std::function<void()> task);

  bool fault_active(FaultBehavior b) const;
  void worker_loop();
  void scheduler_loop();
  void reap_expired_attempts();
  std::chrono::milliseconds decision_timeout() const;

  DeploymentConfig config_;
  KeyPair key_;
  const Clock& clock_;
  PeerTransport& transport_;
  AnchorApi& anchor_;
  CellOptions options_;
  std::size_t index_ = 0;

  std::unique_ptr<Runtime> runtime_;
  std::unique_ptr<Ledger> ledger_;

  // Contract tickets and the report-stage gate.
  mutable std::mutex sched_mutex_;
  std::condition_variable stage_cv_;
  std::map<Address, std::deque<TicketPtr>> queues_;
  std::uint64_t arrivals_ = 0;
  bool stage_active_ = false;
  std::uint64_t stage_cutoff_ = 0;

  // Commits take this shared; the stage's clone takes it exclusively.
  std::shared_mutex commit_gate_;
  std::mutex stage_mutex_;
  std::function<void()> stage_hook_;

  mutable std::mutex tx_mutex_;
  std::set<TxKey> in_flight_;
  std::map<TxKey, Receipt> receipts_;
  std::map<TxKey, Envelope> confirmations_;
  std::map<Nonce, std::shared_ptr<PeerAttempt>> attempts_;  // by forward nonce
  std::map<Nonce, std::pair<bool, std::chrono::steady_clock::time_point>> early_decisions_;
  std::set<Nonce> reverted_forwards_;

  mutable std::mutex health_mutex_;
  std::map<Address, CellStatus> health_;

  mutable std::mutex snapshot_mutex_;
  std::int64_t current_cycle_ = 0;
  std::uint64_t last_snapshot_seq_ = 0;
  std::map<std::int64_t, SnapshotArchive> archives_;

  mutable std::mutex report_mutex_;
  std::deque<PendingReport> pending_reports_;

  mutable std::mutex contingency_mutex_;
  std::uint64_t contingency_seen_ = 0;
  std::map<std::uint64_t, std::pair<Envelope, std::int64_t>> contingency_pending_;  // position -> (tx, first cycle)

  mutable std::mutex fault_mutex_;
  Fault fault_;

  // Background work.
  mutable std::mutex tasks_mutex_;
  mutable std::condition_variable tasks_cv_;
  std::size_t tasks_in_flight_ = 0;
  std::atomic<bool> stopping_{false};
  std::mutex worker_mutex_;
  std::condition_variable worker_cv_;
  std::thread worker_;
  std::thread scheduler_;
  std::atomic<bool> scheduler_running_{false};
};

}  // namespace blcm
