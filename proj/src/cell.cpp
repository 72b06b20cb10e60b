#include "blcm/cell.hpp"

#include <algorithm>
#include <cctype>
#include <iostream>

namespace blcm {
namespace {

using SteadyClock = std::chrono::steady_clock;

enum TicketKind : int { kService = 0, kForward = 1, kBarrier = 2 };

bool is_client_opcode(Opcode op) { return op == Opcode::TxCommit || op == Opcode::Deploy || op == Opcode::CasPut; }

std::pair<Timestamp, Nonce> priority_of(const Envelope& tx) { return {tx.payload.timestamp, tx.payload.nonce}; }

std::string reason_of(ErrorCode code) {
  std::string name(error_name(code));
  std::string out;
  for (std::size_t i = 0; i < name.size(); ++i) {
    char c = name[i];
    if (std::isupper(static_cast<unsigned char>(c)) && i > 0) out.push_back('_');
    out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  return out;
}

template <typename F>
struct ScopeExit {
  F fn;
  bool armed = true;
  ~ScopeExit() {
    if (armed) fn();
  }
};
template <typename F>
ScopeExit(F) -> ScopeExit<F>;

}  // namespace

// -- faults ------------------------------------------------------------------

std::string_view fault_name(FaultBehavior b) {
  switch (b) {
    case FaultBehavior::None: return "none";
    case FaultBehavior::Delay: return "delay";
    case FaultBehavior::Tamper: return "tamper";
    case FaultBehavior::Perturb: return "perturb";
    case FaultBehavior::Censor: return "censor";
    case FaultBehavior::Offline: return "offline";
    case FaultBehavior::LateReport: return "late-report";
  }
  return "none";
}

FaultBehavior parse_fault(std::string_view name) {
  for (auto b : {FaultBehavior::None, FaultBehavior::Delay, FaultBehavior::Tamper, FaultBehavior::Perturb,
                 FaultBehavior::Censor, FaultBehavior::Offline, FaultBehavior::LateReport})
    if (fault_name(b) == name) return b;
  throw Error(ErrorCode::InvalidArgument, "unknown fault behavior '" + std::string(name) + "'");
}

// -- confirmations and receipts ----------------------------------------------

Json Confirmation::to_json() const {
  return Json{{"tx_sender", tx_sender.str()},       {"tx_nonce", tx_nonce.hex()},
              {"contract", contract.str()},         {"outcome", outcome_name(outcome)},
              {"fingerprint", fingerprint.hex()},   {"base_version", base_version}};
}

Confirmation Confirmation::from_envelope(const Envelope& env) {
  if (env.payload.opcode != Opcode::TxConfirm) throw Error(ErrorCode::Malformed, "not a TX_CONFIRM envelope");
  const auto& d = env.payload.data;
  try {
    Confirmation c;
    c.cell = env.payload.sender;
    c.tx_sender = Address::parse(d.at("tx_sender").get<std::string>());
    c.tx_nonce = Nonce::from_hex(d.at("tx_nonce").get<std::string>());
    c.contract = Address::parse(d.at("contract").get<std::string>());
    c.outcome = parse_outcome(d.at("outcome").get<std::string>());
    c.fingerprint = Digest::from_hex(d.at("fingerprint").get<std::string>());
    c.base_version = d.at("base_version").get<std::uint64_t>();
    return c;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("confirmation: ") + ex.what());
  }
}

Json Receipt::to_json() const {
  Json confs = Json::array();
  for (const auto& c : confirmations) confs.push_back(envelope_to_json(c));
  return Json{{"service_cell", service_cell.str()},
              {"tx_sender", tx_sender.str()},
              {"tx_nonce", tx_nonce.hex()},
              {"contract", contract.str()},
              {"outcome", outcome_name(outcome)},
              {"revert_reason", revert_reason},
              {"result", result},
              {"error", error ? Json(error_name(*error)) : Json(nullptr)},
              {"confirmations", confs}};
}

Receipt Receipt::from_json(const Json& j) {
  try {
    Receipt r;
    r.service_cell = Address::parse(j.at("service_cell").get<std::string>());
    r.tx_sender = Address::parse(j.at("tx_sender").get<std::string>());
    r.tx_nonce = Nonce::from_hex(j.at("tx_nonce").get<std::string>());
    r.contract = Address::parse(j.at("contract").get<std::string>());
    r.outcome = parse_outcome(j.at("outcome").get<std::string>());
    r.revert_reason = j.value("revert_reason", "");
    r.result = j.value("result", Json::object());
    if (auto it = j.find("error"); it != j.end() && !it->is_null()) r.error = error_from_name(it->get<std::string>());
    for (const auto& c : j.at("confirmations")) r.confirmations.push_back(envelope_from_json(c));
    return r;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("receipt: ") + ex.what());
  }
}

bool verify_receipt(const Receipt& receipt, const DeploymentInvariants& inv, std::string* why) {
  auto fail = [&](std::string msg) {
    if (why) *why = std::move(msg);
    return false;
  };
  std::set<Address> seen;
  std::optional<Digest> common;
  bool own = false;
  for (const auto& env : receipt.confirmations) {
    Address signer;
    try {
      signer = verify_envelope(env, std::nullopt);
    } catch (const Error& e) {
      return fail(std::string("confirmation signature: ") + e.what());
    }
    if (!inv.is_cell(signer)) return fail("confirmation from non-member " + signer.str());
    if (!seen.insert(signer).second) return fail("two confirmations from " + signer.str());
    Confirmation c;
    try {
      c = Confirmation::from_envelope(env);
    } catch (const Error& e) {
      return fail(e.what());
    }
    if (c.tx_nonce != receipt.tx_nonce || c.tx_sender != receipt.tx_sender || c.contract != receipt.contract)
      return fail("confirmation for a different transaction");
    if (signer == receipt.service_cell) own = true;
    if (receipt.outcome != Outcome::Reverted) {
      if (c.outcome != receipt.outcome) return fail("confirmation outcome differs from the receipt");
      if (common && *common != c.fingerprint) return fail("confirmations disagree on the fingerprint");
      common = c.fingerprint;
    }
  }
  if (!own) return fail("service cell confirmation missing");
  return true;
}

// -- tickets -----------------------------------------------------------------

struct Cell::Ticket {
  Address contract;
  int kind = kService;
  std::optional<std::pair<Timestamp, Nonce>> priority;
  std::optional<Address> origin;
  std::uint64_t arrival = 0;
  bool started = false;
  std::condition_variable cv;
};

struct Cell::PeerAttempt {
  enum class State { Waiting, Prepared, Done };
  Nonce forward_nonce;
  Address service;
  Envelope tx;
  std::optional<std::uint64_t> contingency;
  State state = State::Waiting;
  TicketPtr ticket;
  std::optional<PreparedExecution> prepared;
  std::optional<Envelope> confirmation;
  SteadyClock::time_point decision_deadline{};
};

Cell::TicketPtr Cell::admit(const Address& contract, int kind, std::optional<std::pair<Timestamp, Nonce>> priority,
                            std::optional<Address> origin) {
  auto t = std::make_shared<Ticket>();
  t->contract = contract;
  t->kind = kind;
  t->priority = priority;
  t->origin = origin;
  std::lock_guard lock(sched_mutex_);
  t->arrival = ++arrivals_;
  auto& q = queues_[contract];
  if (kind == kService) {
    q.push_back(t);
    return t;
  }
  // Forwards and barriers go ahead of client work that has not started yet:
  // that work holds nothing anywhere, so letting them pass cannot deadlock.
  std::size_t pos = q.size();
  while (pos > 0 && q[pos - 1]->kind == kService && !q[pos - 1]->started) --pos;
  if (kind == kForward && priority) {
    // Wait-die: a forward may only wait behind older transactions. An earlier
    // forward from the same service cell is exempt: that cell serialises its
    // own work per contract, so the earlier one has its decision on the way.
    for (std::size_t i = 0; i < pos; ++i)
      if (q[i]->priority && *q[i]->priority > *priority && !(origin && q[i]->origin == origin))
        throw Error(ErrorCode::Conflict, "younger transaction holds " + contract.str());
  }
  q.insert(q.begin() + static_cast<std::ptrdiff_t>(pos), t);
  return t;
}

std::size_t Cell::queue_depth(const Address& contract) const {
  std::lock_guard lock(sched_mutex_);
  auto it = queues_.find(contract);
  return it == queues_.end() ? 0 : it->second.size();
}

bool Cell::wait_turn(const TicketPtr& t, SteadyClock::time_point deadline) {
  std::unique_lock lock(sched_mutex_);
  auto& q = queues_[t->contract];
  while (q.front() != t) {
    if (t->cv.wait_until(lock, deadline) == std::cv_status::timeout && q.front() != t) {
      q.erase(std::find(q.begin(), q.end(), t));
      return false;
    }
  }
  t->started = true;
  return true;
}

bool Cell::wait_gate(const TicketPtr& t, SteadyClock::time_point deadline) {
  std::unique_lock lock(sched_mutex_);
  return stage_cv_.wait_until(lock, deadline, [&] { return !stage_active_ || t->arrival <= stage_cutoff_; });
}

void Cell::release(const TicketPtr& t) {
  std::lock_guard lock(sched_mutex_);
  auto& q = queues_[t->contract];
  auto it = std::find(q.begin(), q.end(), t);
  if (it == q.end()) return;
  bool was_front = it == q.begin();
  q.erase(it);
  if (was_front && !q.empty()) q.front()->cv.notify_one();
}

// -- construction --------------------------------------------------------------

Cell::Cell(DeploymentConfig config, KeyPair key, const Clock& clock, PeerTransport& transport, AnchorApi& anchor,
           CellOptions options)
    : config_(std::move(config)),
      key_(std::move(key)),
      clock_(clock),
      transport_(transport),
      anchor_(anchor),
      options_(std::move(options)) {
  config_.invariants.validate();
  index_ = config_.cell_index(key_.address);
  runtime_ = Runtime::genesis(config_.allocation);
  for (const auto& c : config_.invariants.cell_addresses) health_[c].cell = c;

  if (options_.ledger_path) {
    // Rebuild state by replaying the ledger file.
    ledger_ = std::make_unique<Ledger>(*options_.ledger_path);
    std::int64_t cycle = 0;
    for (const auto& e : ledger_->slice(1, ledger_->last_seq())) {
      if (e.cycle > cycle) {
        runtime_->on_report_boundary();
        cycle = e.cycle;
      }
      if (e.outcome != Outcome::Reverted) runtime_->apply(e.envelope);
    }
    current_cycle_ = cycle;
    last_snapshot_seq_ = 0;
  } else {
    ledger_ = std::make_unique<Ledger>();
  }
  worker_ = std::thread([this] { worker_loop(); });
}

Cell::~Cell() {
  stop();
  stopping_ = true;
  worker_cv_.notify_all();
  if (worker_.joinable()) worker_.join();
  std::unique_lock lock(tasks_mutex_);
  tasks_cv_.wait(lock, [&] { return tasks_in_flight_ == 0; });
}

void Cell::spawn(std::function<void()> task) {
  {
    std::lock_guard lock(tasks_mutex_);
    ++tasks_in_flight_;
  }
  std::thread([this, task = std::move(task)] {
    try {
      task();
    } catch (...) {
    }
    std::lock_guard lock(tasks_mutex_);
    --tasks_in_flight_;
    tasks_cv_.notify_all();
  }).detach();
}

bool Cell::wait_idle(std::chrono::milliseconds timeout) const {
  auto deadline = SteadyClock::now() + timeout;
  for (;;) {
    {
      std::unique_lock lock(tasks_mutex_);
      if (!tasks_cv_.wait_until(lock, deadline, [&] { return tasks_in_flight_ == 0; })) return false;
    }
    bool pending = false;
    {
      std::lock_guard lock(tx_mutex_);
      for (const auto& [_, a] : attempts_)
        if (a->state != PeerAttempt::State::Done) pending = true;
      pending = pending || !in_flight_.empty();
    }
    if (!pending) return true;
    if (SteadyClock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
  }
}

std::chrono::milliseconds Cell::decision_timeout() const {
  if (options_.decision_timeout.count() > 0) return options_.decision_timeout;
  return config_.invariants.delta * 4;
}

// -- faults --------------------------------------------------------------------

void Cell::inject_fault(Fault fault) {
  std::lock_guard lock(fault_mutex_);
  fault_ = std::move(fault);
}

void Cell::clear_fault() { inject_fault({}); }

Fault Cell::fault() const {
  std::lock_guard lock(fault_mutex_);
  return fault_;
}

bool Cell::fault_active(FaultBehavior b) const {
  std::lock_guard lock(fault_mutex_);
  if (fault_.behavior != b) return false;
  return !fault_.until || SteadyClock::now() < *fault_.until;
}

// -- client path ---------------------------------------------------------------

Receipt Cell::handle_commit(const Envelope& tx) {
  if (fault_active(FaultBehavior::Offline)) throw Error(ErrorCode::Unreachable, "cell is offline");
  auto sender = verify_envelope(tx, clock_.now(), config_.skew);
  if (!is_client_opcode(tx.payload.opcode))
    throw Error(ErrorCode::UnknownOpcode, std::string(opcode_name(tx.payload.opcode)) + " is not a transaction");
  if (fault_active(FaultBehavior::Censor)) {
    auto f = fault();
    if (!f.target || *f.target == sender) throw Error(ErrorCode::NotSubscribed, "transaction filtered");
  }
  if (!config_.is_subscribed(address(), sender))
    throw Error(ErrorCode::NotSubscribed, sender.str() + " has no subscription with " + address().str());
  if (!runtime_->has_contract(tx.payload.recipient)) throw Error(ErrorCode::UnknownContract, tx.payload.recipient.str());
  return execute_as_service(tx, std::nullopt);
}

Envelope Cell::sign_confirmation(const Envelope& tx, Outcome outcome, const Digest& fingerprint,
                                 std::uint64_t base_version, const Nonce& reply_to) {
  Confirmation c;
  c.tx_sender = tx.payload.sender;
  c.tx_nonce = tx.payload.nonce;
  c.contract = tx.payload.recipient;
  c.outcome = outcome;
  c.fingerprint = fingerprint;
  c.base_version = base_version;
  return make_envelope(key_, tx.payload.sender, Opcode::TxConfirm, c.to_json(), clock_.now(), reply_to);
}

Receipt Cell::receipt_from_ledger(const LedgerEntry& entry) {
  const auto& tx = entry.envelope;
  {
    std::lock_guard lock(tx_mutex_);
    if (auto it = receipts_.find({tx.payload.sender, tx.payload.nonce}); it != receipts_.end()) return it->second;
  }
  Receipt r;
  r.service_cell = address();
  r.tx_sender = tx.payload.sender;
  r.tx_nonce = tx.payload.nonce;
  r.contract = tx.payload.recipient;
  r.outcome = entry.outcome;
  r.error = entry.error;
  r.confirmations.push_back(sign_confirmation(tx, entry.outcome, entry.post_fingerprint,
                                              entry.contract_version - 1, tx.payload.nonce));
  return r;
}

void Cell::finalize(const Envelope& tx, const PreparedExecution& prepared, Outcome outcome,
                    std::optional<std::uint64_t> contingency, std::optional<ErrorCode> error) {
  std::shared_lock gate(commit_gate_);
  LedgerEntry e;
  e.envelope = tx;
  e.outcome = outcome;
  e.error = error;
  e.contingency_position = contingency;
  {
    std::lock_guard lock(snapshot_mutex_);
    e.cycle = current_cycle_;
  }
  if (outcome != Outcome::Reverted) {
    runtime_->commit(prepared);
    e.post_fingerprint = prepared.post_fingerprint;
    e.contract_version = prepared.base_version + 1;
  } else {
    e.post_fingerprint = runtime_->has_contract(prepared.contract_id) ? runtime_->fingerprint(prepared.contract_id)
                                                                       : prepared.post_fingerprint;
    e.contract_version = prepared.base_version;
  }
  ledger_->append(std::move(e));
}

Receipt Cell::execute_as_service(const Envelope& tx, std::optional<std::uint64_t> contingency) {
  const TxKey key{tx.payload.sender, tx.payload.nonce};
  const Address contract = tx.payload.recipient;

  if (auto done = ledger_->find(key.first, key.second); done && done->outcome != Outcome::Reverted)
    return receipt_from_ledger(*done);
  {
    std::lock_guard lock(tx_mutex_);
    if (!in_flight_.insert(key).second) throw Error(ErrorCode::Busy, "transaction already in progress");
  }
  ScopeExit clear_flight{[&] {
    std::lock_guard lock(tx_mutex_);
    in_flight_.erase(key);
  }};

  Receipt receipt;
  receipt.service_cell = address();
  receipt.tx_sender = key.first;
  receipt.tx_nonce = key.second;
  receipt.contract = contract;

  auto ticket = admit(contract, kService, priority_of(tx));
  auto local_deadline = SteadyClock::now() + options_.local_wait;
  if (!wait_turn(ticket, local_deadline)) {
    receipt.revert_reason = "busy";
    return receipt;
  }
  ScopeExit release_ticket{[&] { release(ticket); }};
  if (!wait_gate(ticket, local_deadline)) {
    receipt.revert_reason = "busy";
    return receipt;
  }

  for (int attempt = 0; attempt < 3; ++attempt) {
    if (auto done = ledger_->find(key.first, key.second); done && done->outcome != Outcome::Reverted)
      return receipt_from_ledger(*done);
    if (!runtime_->has_contract(contract)) throw Error(ErrorCode::UnknownContract, contract.str());

    PreparedExecution prepared = runtime_->prepare(tx);
    auto cycle = current_cycle();
    std::vector<Address> peers;
    for (const auto& c : config_.invariants.cell_addresses)
      if (c != address() && !is_excluded(c, cycle)) peers.push_back(c);

    Json fwd_data{{"tx", envelope_to_json(tx)},
                  {"base_version", prepared.base_version},
                  {"contingency", contingency ? Json(*contingency) : Json(nullptr)}};
    Envelope fwd = make_envelope(key_, contract, Opcode::TxForward, std::move(fwd_data), clock_.now());

    // Parallel fan-out with a single deadline.
    struct FanOut {
      std::mutex m;
      std::condition_variable cv;
      std::vector<std::optional<Envelope>> confirmations;
      std::vector<std::optional<Error>> errors;
      std::size_t remaining = 0;
    };
    auto fan = std::make_shared<FanOut>();
    fan->confirmations.resize(peers.size());
    fan->errors.resize(peers.size());
    fan->remaining = peers.size();
    auto fan_deadline = SteadyClock::now() + config_.invariants.delta;
    for (std::size_t i = 0; i < peers.size(); ++i) {
      spawn([this, fan, i, peer = peers[i], fwd] {
        std::optional<Envelope> conf;
        std::optional<Error> err;
        try {
          conf = transport_.forward(peer, fwd);
        } catch (const Error& e) {
          err = e;
        } catch (const std::exception& e) {
          err = Error(ErrorCode::Unreachable, e.what());
        }
        std::lock_guard lock(fan->m);
        fan->confirmations[i] = std::move(conf);
        fan->errors[i] = std::move(err);
        --fan->remaining;
        fan->cv.notify_all();
      });
    }
    std::vector<std::optional<Envelope>> confs;
    std::vector<std::optional<Error>> errs;
    {
      std::unique_lock lock(fan->m);
      fan->cv.wait_until(lock, fan_deadline, [&] { return fan->remaining == 0; });
      confs = fan->confirmations;
      errs = fan->errors;
    }

    bool missed = false, mismatch = false, stale = false;
    std::optional<ErrorCode> refusal;
    std::vector<Envelope> peer_confs;
    std::vector<Address> stale_peers;
    for (std::size_t i = 0; i < peers.size(); ++i) {
      if (confs[i]) {
        try {
          auto signer = verify_envelope(*confs[i], std::nullopt);
          auto c = Confirmation::from_envelope(*confs[i]);
          if (signer != peers[i] || c.tx_nonce != key.second || c.tx_sender != key.first)
            throw Error(ErrorCode::Malformed, "confirmation does not match");
          if (c.fingerprint != prepared.post_fingerprint || c.outcome != prepared.result.outcome) mismatch = true;
          peer_confs.push_back(*confs[i]);
          record_success(peers[i]);
        } catch (const Error&) {
          mismatch = true;
        }
      } else if (errs[i] && errs[i]->code() != ErrorCode::Unreachable) {
        record_success(peers[i]);
        if (errs[i]->code() == ErrorCode::StaleVersion) {
          stale = true;
          stale_peers.push_back(peers[i]);
        }
        if (!refusal) refusal = errs[i]->code();
      } else {
        missed = true;
        record_miss(peers[i]);
      }
    }

    bool commit = !missed && !mismatch && !refusal;
    Json decision{{"forward", fwd.payload.nonce.hex()},
                  {"tx_sender", key.first.str()},
                  {"tx_nonce", key.second.hex()},
                  {"commit", commit},
                  {"fingerprint", prepared.post_fingerprint.hex()}};
    send_decisions(peers, make_envelope(key_, contract, Opcode::TxDecide, std::move(decision), clock_.now(),
                                        fwd.payload.nonce));

    if (commit) {
      finalize(tx, prepared, prepared.result.outcome, contingency, prepared.result.error);
      receipt.outcome = prepared.result.outcome;
      receipt.result = prepared.result.result;
      receipt.error = prepared.result.error;
      receipt.confirmations.push_back(sign_confirmation(tx, prepared.result.outcome, prepared.post_fingerprint,
                                                        prepared.base_version, tx.payload.nonce));
      for (auto& c : peer_confs) receipt.confirmations.push_back(std::move(c));
      std::lock_guard lock(tx_mutex_);
      receipts_[key] = receipt;
      return receipt;
    }

    finalize(tx, prepared, Outcome::Reverted, contingency, ErrorCode::TransactionReverted);
    receipt.outcome = Outcome::Reverted;
    receipt.error = ErrorCode::TransactionReverted;
    if (missed)
      receipt.revert_reason = "deadline";
    else if (mismatch)
      receipt.revert_reason = "mismatch";
    else
      receipt.revert_reason = reason_of(*refusal);
    if (mismatch) runtime_->set_excluded(contract, true);

    // A peer ahead of us means we missed commits; catch up and try again.
    bool caught_up = false;
    if (stale && !missed && !mismatch)
      for (const auto& p : stale_peers) caught_up = sync_contract(p, contract) || caught_up;
    if (!caught_up) {
      receipt.confirmations.push_back(
          sign_confirmation(tx, Outcome::Reverted, prepared.post_fingerprint, prepared.base_version, tx.payload.nonce));
      for (auto& c : peer_confs) receipt.confirmations.push_back(std::move(c));
      return receipt;
    }
  }
  receipt.confirmations.push_back(
      sign_confirmation(tx, Outcome::Reverted, runtime_->fingerprint(contract), runtime_->version(contract),
                        tx.payload.nonce));
  return receipt;
}

void Cell::send_decisions(const std::vector<Address>& peers, Envelope decision) {
  for (const auto& p : peers)
    spawn([this, p, decision] { transport_.decide(p, decision); });
}

// -- peer path -----------------------------------------------------------------

Envelope Cell::handle_forward(const Envelope& fwd) {
  if (fault_active(FaultBehavior::Offline)) throw Error(ErrorCode::Unreachable, "cell is offline");
  auto now = clock_.now();
  auto from = verify_envelope(fwd, now, config_.skew);
  if (fwd.payload.opcode != Opcode::TxForward) throw Error(ErrorCode::UnknownOpcode, "expected TX_FORWARD");
  if (!config_.invariants.is_cell(from) || from == address())
    throw Error(ErrorCode::NotMember, from.str() + " may not forward to this cell");

  Envelope tx;
  std::uint64_t base_version = 0;
  std::optional<std::uint64_t> contingency;
  try {
    const auto& d = fwd.payload.data;
    tx = envelope_from_json(d.at("tx"));
    base_version = d.at("base_version").get<std::uint64_t>();
    if (auto it = d.find("contingency"); it != d.end() && !it->is_null()) contingency = it->get<std::uint64_t>();
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("forward: ") + ex.what());
  }
  verify_envelope(tx, contingency ? std::nullopt : std::optional<Timestamp>(now), config_.skew);
  if (!is_client_opcode(tx.payload.opcode)) throw Error(ErrorCode::UnknownOpcode, "forwarded message is not a transaction");
  const TxKey key{tx.payload.sender, tx.payload.nonce};
  const Address contract = tx.payload.recipient;

  auto attempt = std::make_shared<PeerAttempt>();
  attempt->forward_nonce = fwd.payload.nonce;
  attempt->service = from;
  attempt->tx = tx;
  attempt->contingency = contingency;
  {
    std::lock_guard lock(tx_mutex_);
    if (auto it = attempts_.find(fwd.payload.nonce); it != attempts_.end()) {
      if (it->second->confirmation) return *it->second->confirmation;
      throw Error(ErrorCode::Busy, "forward already in progress");
    }
    if (reverted_forwards_.contains(fwd.payload.nonce)) throw Error(ErrorCode::Conflict, "forward was reverted");
    if (auto it = confirmations_.find(key); it != confirmations_.end()) {
      if (Confirmation::from_envelope(it->second).base_version == base_version) return it->second;
      throw Error(ErrorCode::StaleVersion, "transaction already finalized here");
    }
    attempts_[fwd.payload.nonce] = attempt;
  }
  TicketPtr ticket;
  ScopeExit cleanup{[&] {
    if (ticket) release(ticket);
    std::lock_guard lock(tx_mutex_);
    attempts_.erase(fwd.payload.nonce);
  }};

  if (fault_active(FaultBehavior::Delay)) std::this_thread::sleep_for(fault().delay);
  {
    std::lock_guard lock(tx_mutex_);
    if (auto it = early_decisions_.find(fwd.payload.nonce); it != early_decisions_.end() && !it->second.first)
      throw Error(ErrorCode::Conflict, "service cell already reverted");
  }

  auto deadline = SteadyClock::now() + config_.invariants.delta;
  if (!runtime_->has_contract(contract)) {
    // Possibly a contract deployed while we were behind.
    auto dt = admit(system_contracts::deployer_id(), kService, std::nullopt);
    if (wait_turn(dt, deadline)) {
      sync_contract(from, system_contracts::deployer_id());
      release(dt);
    }
    if (!runtime_->has_contract(contract)) throw Error(ErrorCode::UnknownContract, contract.str());
  }

  ticket = admit(contract, kForward, priority_of(tx), from);
  if (!wait_turn(ticket, deadline)) {
    ticket.reset();
    throw Error(ErrorCode::Busy, "contract busy past the forwarding deadline");
  }
  if (!wait_gate(ticket, deadline)) throw Error(ErrorCode::Busy, "report stage outlasted the forwarding deadline");

  if (runtime_->version(contract) < base_version) sync_contract(from, contract);
  auto mine = runtime_->version(contract);
  if (mine != base_version)
    throw Error(ErrorCode::StaleVersion,
                "contract at version " + std::to_string(mine) + ", forward expects " + std::to_string(base_version));
  if (auto done = ledger_->find(key.first, key.second); done && done->outcome != Outcome::Reverted)
    throw Error(ErrorCode::StaleVersion, "transaction already finalized here");

  PreparedExecution prepared = runtime_->prepare(tx);
  Digest fp = prepared.post_fingerprint;
  if (fault_active(FaultBehavior::Perturb)) fp = keccak256(fp.hex() + "/perturbed");
  Envelope conf = sign_confirmation(tx, prepared.result.outcome, fp, prepared.base_version, fwd.payload.nonce);

  std::optional<bool> early;
  {
    std::lock_guard lock(tx_mutex_);
    attempt->ticket = ticket;
    attempt->prepared = std::move(prepared);
    attempt->confirmation = conf;
    attempt->state = PeerAttempt::State::Prepared;
    attempt->decision_deadline = SteadyClock::now() + decision_timeout();
    if (auto it = early_decisions_.find(fwd.payload.nonce); it != early_decisions_.end()) early = it->second.first;
  }
  cleanup.armed = false;
  if (early) finish_attempt(attempt, *early);
  return conf;
}

void Cell::handle_decide(const Envelope& decision) {
  if (fault_active(FaultBehavior::Offline)) throw Error(ErrorCode::Unreachable, "cell is offline");
  auto from = verify_envelope(decision, std::nullopt);
  if (decision.payload.opcode != Opcode::TxDecide) throw Error(ErrorCode::UnknownOpcode, "expected TX_DECIDE");
  if (!config_.invariants.is_cell(from)) throw Error(ErrorCode::NotMember, from.str());
  Nonce forward;
  bool commit = false;
  try {
    forward = Nonce::from_hex(decision.payload.data.at("forward").get<std::string>());
    commit = decision.payload.data.at("commit").get<bool>();
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::Malformed, std::string("decision: ") + ex.what());
  }
  std::shared_ptr<PeerAttempt> attempt;
  {
    std::lock_guard lock(tx_mutex_);
    auto it = attempts_.find(forward);
    if (it == attempts_.end() || it->second->state == PeerAttempt::State::Waiting) {
      early_decisions_[forward] = {commit, SteadyClock::now()};
      return;
    }
    attempt = it->second;
  }
  if (attempt->service != from) throw Error(ErrorCode::NotMember, "decision from a cell that did not forward");
  finish_attempt(attempt, commit);
}

void Cell::finish_attempt(const std::shared_ptr<PeerAttempt>& attempt, bool commit) {
  {
    std::lock_guard lock(tx_mutex_);
    if (attempt->state != PeerAttempt::State::Prepared) return;
    attempt->state = PeerAttempt::State::Done;
    attempts_.erase(attempt->forward_nonce);
    early_decisions_.erase(attempt->forward_nonce);
    if (!commit) reverted_forwards_.insert(attempt->forward_nonce);
  }
  const auto& p = *attempt->prepared;
  if (commit) {
    finalize(attempt->tx, p, p.result.outcome, attempt->contingency, p.result.error);
    std::lock_guard lock(tx_mutex_);
    confirmations_[{attempt->tx.payload.sender, attempt->tx.payload.nonce}] = *attempt->confirmation;
  } else {
    finalize(attempt->tx, p, Outcome::Reverted, attempt->contingency, ErrorCode::TransactionReverted);
  }
  release(attempt->ticket);
}

void Cell::reap_expired_attempts() {
  std::vector<std::shared_ptr<PeerAttempt>> expired;
  auto now = SteadyClock::now();
  {
    std::lock_guard lock(tx_mutex_);
    for (const auto& [_, a] : attempts_)
      if (a->state == PeerAttempt::State::Prepared && a->decision_deadline < now) expired.push_back(a);
    for (auto it = early_decisions_.begin(); it != early_decisions_.end();)
      it = (now - it->second.second > std::chrono::minutes(5)) ? early_decisions_.erase(it) : std::next(it);
  }
  for (const auto& a : expired) finish_attempt(a, false);
}

bool Cell::sync_contract(const Address& from, const Address& contract) {
  if (!runtime_->has_contract(contract)) return false;
  auto mine = runtime_->version(contract);
  std::vector<LedgerEntry> history;
  try {
    history = transport_.contract_history(from, contract, mine);
  } catch (const Error&) {
    return false;
  }
  std::sort(history.begin(), history.end(),
            [](const auto& a, const auto& b) { return a.contract_version < b.contract_version; });
  std::size_t applied = 0;
  for (const auto& e : history) {
    if (e.contract_version != mine + 1 || e.envelope.payload.recipient != contract) break;
    try {
      verify_envelope(e.envelope, std::nullopt);
    } catch (const Error&) {
      break;
    }
    auto prepared = runtime_->prepare(e.envelope);
    if (prepared.result.outcome != e.outcome || prepared.post_fingerprint != e.post_fingerprint) break;
    finalize(e.envelope, prepared, e.outcome, e.contingency_position, prepared.result.error);
    ++mine;
    ++applied;
  }
  return applied > 0;
}

// -- peer health -----------------------------------------------------------------

void Cell::record_miss(const Address& cell) {
  auto cycle = current_cycle();
  std::lock_guard lock(health_mutex_);
  auto& h = health_[cell];
  h.cell = cell;
  ++h.consecutive_misses;
  if (h.consecutive_misses > config_.invariants.miss_threshold) h.excluded_until_cycle = cycle + 1;
}

void Cell::record_success(const Address& cell) {
  std::lock_guard lock(health_mutex_);
  health_[cell].consecutive_misses = 0;
}

bool Cell::is_excluded(const Address& cell, std::int64_t cycle) const {
  std::lock_guard lock(health_mutex_);
  auto it = health_.find(cell);
  return it != health_.end() && it->second.excluded_until_cycle && cycle < *it->second.excluded_until_cycle;
}

CellStatus Cell::status_of(const Address& cell) const {
  std::lock_guard lock(health_mutex_);
  auto it = health_.find(cell);
  if (it == health_.end()) return CellStatus{cell, 0, std::nullopt};
  return it->second;
}

// -- report stage ------------------------------------------------------------------

void Cell::set_stage_hook(std::function<void()> hook) {
  std::lock_guard lock(stage_mutex_);
  stage_hook_ = std::move(hook);
}

ReportRecord Cell::run_report_stage(Timestamp now) {
  const auto cycle = cycle_index(now, config_.invariants);
  std::lock_guard stage_lock(stage_mutex_);
  if (cycle < current_cycle())
    throw Error(ErrorCode::InvalidArgument, "snapshot for cycle " + std::to_string(cycle) + " already taken");

  TicketPtr barrier;
  {
    std::lock_guard lock(sched_mutex_);
    stage_active_ = true;
    stage_cutoff_ = arrivals_;
  }
  barrier = admit(system_contracts::cas_id(), kBarrier, std::nullopt);
  ScopeExit reopen{[&] {
    {
      std::lock_guard lock(sched_mutex_);
      stage_active_ = false;
    }
    stage_cv_.notify_all();
  }};
  wait_turn(barrier, SteadyClock::time_point::max());

  std::vector<Runtime::ArchivedContract> frozen;
  std::uint64_t first_seq = 0, last_seq = 0;
  {
    std::unique_lock gate(commit_gate_);
    runtime_->on_report_boundary();
    frozen = runtime_->export_all();
    last_seq = ledger_->last_seq();
    std::lock_guard lock(snapshot_mutex_);
    first_seq = last_snapshot_seq_ + 1;
    last_snapshot_seq_ = last_seq;
    current_cycle_ = cycle + 1;
  }
  release(barrier);

  auto archive = make_archive(address(), cycle, std::move(frozen), first_seq, last_seq);
  if (stage_hook_) stage_hook_();
  reopen.fn();
  reopen.armed = false;

  runtime_->clear_exclusions();
  {
    std::lock_guard lock(health_mutex_);
    for (auto& [_, h] : health_)
      if (h.excluded_until_cycle && *h.excluded_until_cycle <= cycle + 1) {
        h.excluded_until_cycle.reset();
        h.consecutive_misses = 0;
      }
  }

  Digest reported = archive.snapshot.combined;
  if (fault_active(FaultBehavior::Tamper)) reported = keccak256(reported.hex() + "/tampered");
  if (options_.archive_dir) archive.write_directory(*options_.archive_dir / ("cycle-" + std::to_string(cycle)));
  {
    std::lock_guard lock(snapshot_mutex_);
    archives_.insert_or_assign(cycle, std::move(archive));
    while (archives_.size() > std::max<std::size_t>(config_.snapshot_retention, 1)) archives_.erase(archives_.begin());
  }
  {
    std::lock_guard lock(report_mutex_);
    pending_reports_.push_back({cycle, reported});
  }
  if (options_.async_reports)
    worker_cv_.notify_all();
  else
    retry_reports();
  return ReportRecord{address(), cycle, reported, now};
}

std::size_t Cell::retry_reports() {
  if (fault_active(FaultBehavior::Offline)) return pending_reports();
  bool late = fault_active(FaultBehavior::LateReport);
  std::deque<PendingReport> pending;
  {
    std::lock_guard lock(report_mutex_);
    pending.swap(pending_reports_);
  }
  std::deque<PendingReport> keep;
  for (const auto& r : pending) {
    auto now = clock_.now();
    bool timely = report_is_timely(r.cycle, now, config_.invariants);
    if (late && timely) {
      keep.push_back(r);
      continue;
    }
    if (!timely && !late) continue;  // window closed; the report is lost
    try {
      auto env = make_envelope(key_, config_.anchor_address, Opcode::ReportSubmit, report_data(r.cycle, r.fingerprint),
                               now);
      anchor_.submit_report(env);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DuplicateReport && e.code() != ErrorCode::NotAllowedCell) keep.push_back(r);
    } catch (const std::exception&) {
      keep.push_back(r);
    }
  }
  std::lock_guard lock(report_mutex_);
  for (auto it = keep.rbegin(); it != keep.rend(); ++it) pending_reports_.push_front(*it);
  return pending_reports_.size();
}

std::size_t Cell::pending_reports() const {
  std::lock_guard lock(report_mutex_);
  return pending_reports_.size();
}

// -- contingency -------------------------------------------------------------------

std::vector<Envelope> Cell::pull_contingency() {
  std::vector<ContingencyItem> items;
  std::uint64_t since;
  {
    std::lock_guard lock(contingency_mutex_);
    since = contingency_seen_;
  }
  try {
    items = anchor_.fetch_contingency(since);
  } catch (const Error& e) {
    throw Error(ErrorCode::AnchorUnreachable, e.what());
  }
  auto cycle = current_cycle();
  std::vector<Envelope> fresh;
  std::map<std::uint64_t, std::pair<Envelope, std::int64_t>> pending;
  {
    std::lock_guard lock(contingency_mutex_);
    for (const auto& item : items) {
      if (item.position <= contingency_seen_) continue;
      contingency_seen_ = item.position;
      contingency_pending_.emplace(item.position, std::pair{item.envelope, cycle});
      fresh.push_back(item.envelope);
    }
    pending = contingency_pending_;
  }
  const auto m = config_.invariants.cell_addresses.size();
  std::set<TxKey> seen;
  for (const auto& [pos, entry] : pending) {
    const auto& [tx, first_cycle] = entry;
    TxKey key{tx.payload.sender, tx.payload.nonce};
    bool done = !seen.insert(key).second;
    if (!done)
      if (auto e = ledger_->find(key.first, key.second); e && e->outcome != Outcome::Reverted) done = true;
    bool valid = is_client_opcode(tx.payload.opcode) && runtime_->has_contract(tx.payload.recipient);
    if (done || !valid) {
      std::lock_guard lock(contingency_mutex_);
      contingency_pending_.erase(pos);
      continue;
    }
    // One designated driver per position; everyone steps in a cycle later.
    bool drive = (pos % m == index_) || cycle > first_cycle;
    if (!drive) continue;
    try {
      auto r = execute_as_service(tx, pos);
      if (r.outcome != Outcome::Reverted) {
        std::lock_guard lock(contingency_mutex_);
        contingency_pending_.erase(pos);
      }
    } catch (const Error&) {
    }
  }
  return fresh;
}

// -- read side -----------------------------------------------------------------------

std::int64_t Cell::current_cycle() const {
  std::lock_guard lock(snapshot_mutex_);
  return current_cycle_;
}

std::optional<SnapshotArchive> Cell::archive(std::int64_t cycle) const {
  std::lock_guard lock(snapshot_mutex_);
  auto it = archives_.find(cycle);
  if (it == archives_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::int64_t> Cell::latest_snapshot_cycle() const {
  std::lock_guard lock(snapshot_mutex_);
  if (archives_.empty()) return std::nullopt;
  return archives_.rbegin()->first;
}

std::vector<LedgerEntry> Cell::ledger_slice(std::uint64_t first, std::uint64_t last) const {
  return ledger_->slice(first, last);
}

std::vector<LedgerEntry> Cell::contract_history(const Address& contract, std::uint64_t after_version) const {
  if (fault_active(FaultBehavior::Offline)) throw Error(ErrorCode::Unreachable, "cell is offline");
  return ledger_->contract_history(contract, after_version);
}

Json Cell::status() const {
  Json peers = Json::array();
  {
    std::lock_guard lock(health_mutex_);
    for (const auto& [addr, h] : health_)
      peers.push_back(Json{{"cell", addr.str()},
                           {"consecutive_misses", h.consecutive_misses},
                           {"excluded_until_cycle", h.excluded_until_cycle ? Json(*h.excluded_until_cycle) : Json()}});
  }
  Json contracts = Json::array();
  for (const auto& id : runtime_->contract_ids()) {
    try {
      contracts.push_back(Json{{"contract_id", id.str()},
                               {"version", runtime_->version(id)},
                               {"fingerprint", runtime_->fingerprint(id).hex()},
                               {"excluded", runtime_->excluded(id)}});
    } catch (const Error&) {
      // destroyed while listing
    }
  }
  auto latest = latest_snapshot_cycle();
  return Json{{"cell", address().str()},
              {"cycle", current_cycle()},
              {"latest_snapshot", latest ? Json(*latest) : Json()},
              {"ledger_size", ledger_->last_seq()},
              {"pending_reports", pending_reports()},
              {"fault", fault_name(fault().behavior)},
              {"peers", peers},
              {"contracts", contracts}};
}

// -- background threads -----------------------------------------------------------------

void Cell::worker_loop() {
  std::unique_lock lock(worker_mutex_);
  while (!stopping_) {
    worker_cv_.wait_for(lock, std::chrono::milliseconds(50));
    if (stopping_) break;
    lock.unlock();
    try {
      reap_expired_attempts();
      if (options_.async_reports) retry_reports();
    } catch (const std::exception& e) {
      std::cerr << "cell " << address().str() << ": " << e.what() << "\n";
    }
    lock.lock();
  }
}

void Cell::start() {
  if (scheduler_running_.exchange(true)) return;
  scheduler_ = std::thread([this] { scheduler_loop(); });
}

void Cell::stop() {
  if (!scheduler_running_.exchange(false)) return;
  worker_cv_.notify_all();
  if (scheduler_.joinable()) scheduler_.join();
}

void Cell::scheduler_loop() {
  const auto& inv = config_.invariants;
  while (scheduler_running_) {
    auto now = clock_.now();
    auto target = deadline_of_cycle(current_cycle(), inv);
    if (now >= target) {
      // Skip deadlines that passed while we were not running.
      auto stage_at = now >= inv.t0 ? last_deadline(now, inv) : target;
      try {
        run_report_stage(std::max(stage_at, target));
        pull_contingency();
      } catch (const std::exception& e) {
        std::cerr << "cell " << address().str() << ": report stage: " << e.what() << "\n";
      }
      continue;
    }
    std::unique_lock lock(worker_mutex_);
    worker_cv_.wait_for(lock, std::chrono::milliseconds(100));
  }
}

}  // namespace blcm
