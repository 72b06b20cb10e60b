#pragma once

#include <atomic>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "blcm/protocol.hpp"

namespace blcm {

/// A contract's data model: key -> raw byte value, kept in key order.
using Store = std::map<std::string, std::string>;

/// Canonical text of a store: {"key":"hex(value)",...} with sorted keys.
std::string encode_store(const Store& store);
Store decode_store(const Json& j);
Json store_to_json(const Store& store);

enum class ContractKind { System, Community };

struct ContractDescriptor {
  Address contract_id;
  ContractKind kind = ContractKind::Community;
  Address owner;
  bool destroyable = false;
  std::string logic;  // compiled-in implementation name
  Digest code_ref;    // hash of logic name and version

  Json to_json() const;
  static ContractDescriptor from_json(const Json& j);
  bool operator==(const ContractDescriptor&) const = default;
};

Digest code_ref_for(std::string_view logic);
Address derive_contract_id(const Address& owner, std::string_view salt);

namespace system_contracts {
Address deployer_id();
Address cas_id();
Address genesis_fastmoney_id();
}  // namespace system_contracts

enum class Outcome { Accepted, Rejected, Reverted };
std::string_view outcome_name(Outcome o);
Outcome parse_outcome(std::string_view s);

/// Side effect a system contract may request from the runtime on commit.
struct RuntimeEffect {
  enum class Kind { Create, Destroy } kind = Kind::Create;
  ContractDescriptor descriptor;
  Store initial_store;
};

struct ExecResult {
  Outcome outcome = Outcome::Accepted;
  Json result = Json::object();
  std::optional<ErrorCode> error;
  std::string detail;
  std::vector<RuntimeEffect> effects;
};

/// Writes performed by one transaction, layered over the contract's store.
class StoreOverlay {
 public:
  explicit StoreOverlay(const Store& base) : base_(&base) {}

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, std::string value);
  void erase(const std::string& key);
  bool empty() const { return writes_.empty(); }
  void apply_to(Store& store) const;
  Store materialize() const;
  /// encode_store() of the merged view without materializing it.
  std::string encode() const;

 private:
  const Store* base_;
  std::map<std::string, std::optional<std::string>> writes_;
};

/// A bContract implementation. execute() must be a pure function of the
/// overlay contents and the transaction so that every cell derives the same
/// state transition.
class ContractLogic {
 public:
  virtual ~ContractLogic() = default;
  virtual std::string_view name() const = 0;
  virtual ExecResult execute(StoreOverlay& store, const Envelope& tx) const = 0;
};

std::shared_ptr<const ContractLogic> logic_by_name(std::string_view name);

struct ContractState {
  Address contract_id;
  Store store;
  bool excluded_from_snapshot = false;
};

struct StateClone {
  std::uint64_t clone_id = 0;
  Address contract_id;
  std::shared_ptr<const Store> frozen_store;
};

Digest contract_fingerprint(const Store& store);
inline Digest contract_fingerprint(const ContractState& s) { return contract_fingerprint(s.store); }
inline Digest contract_fingerprint(const StateClone& c) { return contract_fingerprint(*c.frozen_store); }

/// Pure (state, tx) -> (state', result) for a single contract.
std::pair<ContractState, ExecResult> contract_execute(const ContractState& state, const ContractLogic& logic,
                                                      const Envelope& tx);

StateClone contract_clone(const ContractState& state);

// ---------------------------------------------------------------------------
// Built-in contracts

namespace fastmoney {
std::string balance_key(const Address& account);
std::uint64_t balance_of(const Store& store, const Address& account);
Store genesis_store(const std::vector<std::pair<Address, std::uint64_t>>& allocation);
Json transfer_data(const Address& to, std::uint64_t amount);
std::uint64_t total_supply(const Store& store);
}  // namespace fastmoney

namespace cas {
std::string blob_key(const Digest& hash);
std::string ref_key(const Digest& hash);

/// Direct CAS operations over a store; the CAS contract wraps these.
Digest put(StoreOverlay& store, std::string_view blob);
std::string get(const Store& store, const Digest& hash);
void addref(StoreOverlay& store, const Digest& hash);
void release(StoreOverlay& store, const Digest& hash);
std::uint64_t refcount(const Store& store, const Digest& hash);
/// Drops every entry whose refcount is zero; returns the number purged.
std::size_t purge_unreferenced(Store& store);

Json put_data(std::string_view blob);
Json ref_data(std::string_view op, const Digest& hash);
}  // namespace cas

namespace deployer {
Json deploy_data(std::string_view logic, std::string_view salt, bool destroyable, const Store& initial_store);
Json destroy_data(const Address& contract);
}  // namespace deployer

// ---------------------------------------------------------------------------

struct ContractInstance {
  ContractDescriptor descriptor;
  std::shared_ptr<const ContractLogic> logic;
  ContractState state;
  std::uint64_t version = 0;  // finalized (accepted or rejected) executions

  Digest fingerprint() const;

 private:
  Digest fingerprint_locked() const;

  mutable std::shared_mutex mutex_;
  mutable std::mutex cache_mutex_;
  mutable std::optional<Digest> cached_fingerprint_;
  friend class Runtime;
};

/// A transaction executed against a contract but not yet applied.
struct PreparedExecution {
  Address contract_id;
  std::uint64_t base_version = 0;
  ExecResult result;
  std::optional<StoreOverlay> writes;  // absent when the store is unchanged
  Digest post_fingerprint;
};

/// Full set of bContracts hosted by one cell (or replayed by an auditor).
/// Callers serialize work per contract; the contract table itself is guarded
/// internally.
class Runtime {
 public:
  Runtime() = default;
  Runtime(const Runtime&) = delete;
  Runtime& operator=(const Runtime&) = delete;

  /// System deployer and CAS, plus a FastMoney instance when `allocation` is non-empty.
  static std::unique_ptr<Runtime> genesis(const std::vector<std::pair<Address, std::uint64_t>>& allocation);

  struct ArchivedContract {
    ContractDescriptor descriptor;
    Store store;
    std::uint64_t version = 0;
    bool excluded = false;
  };
  static std::unique_ptr<Runtime> from_archive(const std::vector<ArchivedContract>& contracts);
  std::vector<ArchivedContract> export_all() const;

  bool has_contract(const Address& id) const;
  std::vector<Address> contract_ids() const;
  ContractDescriptor descriptor(const Address& id) const;
  std::uint64_t version(const Address& id) const;
  Store store_copy(const Address& id) const;
  std::optional<std::string> read(const Address& id, const std::string& key) const;

  PreparedExecution prepare(const Envelope& tx) const;
  /// Applies a prepared execution; outcome Reverted discards it.
  void commit(const PreparedExecution& prepared);
  /// prepare + commit in one step (replay path).
  ExecResult apply(const Envelope& tx);

  Digest fingerprint(const Address& id) const;
  StateClone clone(const Address& id) const;

  void set_excluded(const Address& id, bool excluded);
  bool excluded(const Address& id) const;
  void clear_exclusions();

  /// Report-boundary housekeeping (CAS purge).
  void on_report_boundary();

 private:
  std::shared_ptr<ContractInstance> find(const Address& id) const;
  void insert(ContractDescriptor d, Store store, std::uint64_t version, bool excluded);

  mutable std::shared_mutex table_mutex_;
  std::map<Address, std::shared_ptr<ContractInstance>> contracts_;
  mutable std::atomic<std::uint64_t> next_clone_id_{1};
};

}  // namespace blcm
