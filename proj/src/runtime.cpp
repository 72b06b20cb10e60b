#include "blcm/runtime.hpp"

#include <charconv>
#include <limits>
#include <mutex>

namespace blcm {
namespace {

void append_json_string(std::string& out, const std::string& s) {
  bool plain = true;
  for (unsigned char c : s)
    if (c < 0x20 || c == '"' || c == '\\' || c >= 0x80) {
      plain = false;
      break;
    }
  if (plain) {
    out.push_back('"');
    out += s;
    out.push_back('"');
  } else {
    out += canonical_dump(Json(s));
  }
}

void append_entry(std::string& out, bool& first, const std::string& key, const std::string& value) {
  if (!first) out.push_back(',');
  first = false;
  append_json_string(out, key);
  out.push_back(':');
  out.push_back('"');
  out += to_hex(as_bytes(value));
  out.push_back('"');
}

std::uint64_t parse_u64(std::string_view text) {
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size())
    throw Error(ErrorCode::Malformed, "not an unsigned integer: " + std::string(text));
  return v;
}

ExecResult reject(ErrorCode code, std::string detail) {
  ExecResult r;
  r.outcome = Outcome::Rejected;
  r.error = code;
  r.detail = std::move(detail);
  return r;
}

/// The method a transaction invokes: DEPLOY and CAS_PUT name theirs through
/// the opcode, TX_COMMIT through data.op.
std::string method_of(const Envelope& tx) {
  switch (tx.payload.opcode) {
    case Opcode::Deploy: return "deploy";
    case Opcode::CasPut: return "put";
    case Opcode::TxCommit: {
      auto it = tx.payload.data.find("op");
      if (it != tx.payload.data.end() && it->is_string()) return it->get<std::string>();
      return {};
    }
    default: return {};
  }
}

std::uint64_t amount_field(const Json& data, const char* key) {
  auto it = data.find(key);
  if (it != data.end()) {
    if (it->is_number_unsigned()) return it->get<std::uint64_t>();
    if (it->is_number_integer() && it->get<std::int64_t>() >= 0) return it->get<std::uint64_t>();
  }
  throw Error(ErrorCode::Malformed, std::string("field '") + key + "' must be a non-negative integer");
}

std::string string_field(const Json& data, const char* key) {
  auto it = data.find(key);
  if (it == data.end() || !it->is_string())
    throw Error(ErrorCode::Malformed, std::string("field '") + key + "' must be a string");
  return it->get<std::string>();
}

// -- FastMoney ---------------------------------------------------------------

class FastMoneyLogic final : public ContractLogic {
 public:
  std::string_view name() const override { return "fastmoney"; }

  ExecResult execute(StoreOverlay& store, const Envelope& tx) const override {
    if (method_of(tx) != "transfer") return reject(ErrorCode::UnknownOpcode, "fastmoney understands only transfer");
    try {
      const auto& data = tx.payload.data;
      Address to = Address::parse(string_field(data, "to"));
      std::uint64_t amount = amount_field(data, "amount");
      const Address& from = tx.payload.sender;

      auto from_key = fastmoney::balance_key(from);
      auto from_raw = store.get(from_key);
      std::uint64_t from_balance = from_raw ? parse_u64(*from_raw) : 0;
      if (amount > from_balance)
        return reject(ErrorCode::ContractRuleViolation, "insufficient balance");
      if (amount == 0 || from == to) {
        ExecResult r;
        r.result = {{"from", from.str()}, {"to", to.str()}, {"amount", amount}};
        return r;
      }
      auto to_key = fastmoney::balance_key(to);
      auto to_raw = store.get(to_key);
      std::uint64_t to_balance = to_raw ? parse_u64(*to_raw) : 0;
      if (to_balance > std::numeric_limits<std::uint64_t>::max() - amount)
        return reject(ErrorCode::ContractRuleViolation, "balance overflow");
      store.put(from_key, std::to_string(from_balance - amount));
      store.put(to_key, std::to_string(to_balance + amount));
      ExecResult r;
      r.result = {{"from", from.str()}, {"to", to.str()}, {"amount", amount}};
      return r;
    } catch (const Error& e) {
      return reject(e.code(), e.what());
    }
  }
};

// -- CAS ---------------------------------------------------------------------

class CasLogic final : public ContractLogic {
 public:
  std::string_view name() const override { return "cas"; }

  ExecResult execute(StoreOverlay& store, const Envelope& tx) const override {
    auto method = method_of(tx);
    try {
      const auto& data = tx.payload.data;
      if (method == "put") {
        auto blob = from_hex(string_field(data, "blob"));
        auto hash = cas::put(store, std::string_view(reinterpret_cast<const char*>(blob.data()), blob.size()));
        ExecResult r;
        r.result = {{"hash", hash.hex()}};
        return r;
      }
      if (method == "addref" || method == "release") {
        auto hash = Digest::from_hex(string_field(data, "hash"));
        if (method == "addref")
          cas::addref(store, hash);
        else
          cas::release(store, hash);
        ExecResult r;
        r.result = {{"hash", hash.hex()}};
        return r;
      }
    } catch (const Error& e) {
      return reject(e.code(), e.what());
    }
    return reject(ErrorCode::UnknownOpcode, "cas understands put, addref, release");
  }
};

// -- Deployer ----------------------------------------------------------------

std::string registry_key(const Address& id) { return "contract/" + id.str(); }

class DeployerLogic final : public ContractLogic {
 public:
  std::string_view name() const override { return "deployer"; }

  ExecResult execute(StoreOverlay& store, const Envelope& tx) const override {
    auto method = method_of(tx);
    try {
      if (method == "deploy") return deploy(store, tx);
      if (method == "destroy") return destroy(store, tx);
    } catch (const Error& e) {
      return reject(e.code(), e.what());
    }
    return reject(ErrorCode::UnknownOpcode, "deployer understands deploy, destroy");
  }

 private:
  static ExecResult deploy(StoreOverlay& store, const Envelope& tx) {
    const auto& data = tx.payload.data;
    auto logic = string_field(data, "logic");
    if (logic != "fastmoney") return reject(ErrorCode::InvalidArgument, "no deployable logic named " + logic);
    auto salt = string_field(data, "salt");
    bool destroyable = data.value("destroyable", false);
    Store initial;
    if (auto it = data.find("initial"); it != data.end()) initial = decode_store(*it);

    ContractDescriptor d;
    d.contract_id = derive_contract_id(tx.payload.sender, salt);
    d.kind = ContractKind::Community;
    d.owner = tx.payload.sender;
    d.destroyable = destroyable;
    d.logic = logic;
    d.code_ref = code_ref_for(logic);

    auto key = registry_key(d.contract_id);
    if (store.get(key)) return reject(ErrorCode::DuplicateContract, d.contract_id.str() + " already registered");
    store.put(key, canonical_dump(d.to_json()));

    ExecResult r;
    r.result = {{"contract_id", d.contract_id.str()}};
    r.effects.push_back({RuntimeEffect::Kind::Create, d, std::move(initial)});
    return r;
  }

  static ExecResult destroy(StoreOverlay& store, const Envelope& tx) {
    auto id = Address::parse(string_field(tx.payload.data, "contract"));
    auto key = registry_key(id);
    auto raw = store.get(key);
    if (!raw) return reject(ErrorCode::UnknownContract, id.str());
    Json entry = Json::parse(*raw);
    if (entry.value("destroyed", false)) return reject(ErrorCode::UnknownContract, id.str() + " already destroyed");
    auto d = ContractDescriptor::from_json(entry);
    if (!d.destroyable) return reject(ErrorCode::ContractRuleViolation, "contract is not destroyable");
    if (d.owner != tx.payload.sender) return reject(ErrorCode::ContractRuleViolation, "only the owner may destroy");
    entry["destroyed"] = true;
    store.put(key, canonical_dump(entry));

    ExecResult r;
    r.result = {{"contract_id", id.str()}};
    r.effects.push_back({RuntimeEffect::Kind::Destroy, d, {}});
    return r;
  }
};

/// Contract code must never take down the host; anything that escapes
/// becomes a rejected transaction.
ExecResult safe_execute(const ContractLogic& logic, StoreOverlay& overlay, const Envelope& tx) {
  try {
    return logic.execute(overlay, tx);
  } catch (const Error& e) {
    return reject(e.code(), e.what());
  } catch (const std::exception& e) {
    return reject(ErrorCode::Malformed, e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------

std::string encode_store(const Store& store) {
  std::string out = "{";
  bool first = true;
  for (const auto& [k, v] : store) append_entry(out, first, k, v);
  out.push_back('}');
  return out;
}

Json store_to_json(const Store& store) {
  Json j = Json::object();
  for (const auto& [k, v] : store) j[k] = to_hex(as_bytes(v));
  return j;
}

Store decode_store(const Json& j) {
  if (!j.is_object()) throw Error(ErrorCode::Malformed, "store must be a map");
  Store out;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw Error(ErrorCode::Malformed, "store values must be hex strings");
    auto raw = from_hex(v.get<std::string>());
    out.emplace(k, std::string(raw.begin(), raw.end()));
  }
  return out;
}

Json ContractDescriptor::to_json() const {
  return Json{{"contract_id", contract_id.str()},
              {"kind", kind == ContractKind::System ? "system" : "community"},
              {"owner", owner.str()},
              {"destroyable", destroyable},
              {"logic", logic},
              {"code_ref", code_ref.hex()}};
}

ContractDescriptor ContractDescriptor::from_json(const Json& j) {
  ContractDescriptor d;
  d.contract_id = Address::parse(string_field(j, "contract_id"));
  auto kind = string_field(j, "kind");
  if (kind != "system" && kind != "community") throw Error(ErrorCode::Malformed, "unknown contract kind " + kind);
  d.kind = kind == "system" ? ContractKind::System : ContractKind::Community;
  d.owner = Address::parse(string_field(j, "owner"));
  d.destroyable = j.value("destroyable", false);
  d.logic = string_field(j, "logic");
  d.code_ref = Digest::from_hex(string_field(j, "code_ref"));
  return d;
}

Digest code_ref_for(std::string_view logic) { return keccak256("blcm/logic/" + std::string(logic) + "/1"); }

Address derive_contract_id(const Address& owner, std::string_view salt) {
  auto text = canonical_dump(Json{{"owner", owner.str()}, {"salt", std::string(salt)}});
  return Address::from_span(keccak256(text).view().subspan(12));
}

namespace system_contracts {
Address deployer_id() {
  static const Address id = derive_contract_id(Address{}, "system/deployer");
  return id;
}
Address cas_id() {
  static const Address id = derive_contract_id(Address{}, "system/cas");
  return id;
}
Address genesis_fastmoney_id() {
  static const Address id = derive_contract_id(Address{}, "genesis/fastmoney");
  return id;
}
}  // namespace system_contracts

std::string_view outcome_name(Outcome o) {
  switch (o) {
    case Outcome::Accepted: return "accepted";
    case Outcome::Rejected: return "rejected";
    case Outcome::Reverted: return "reverted";
  }
  return "unknown";
}

Outcome parse_outcome(std::string_view s) {
  if (s == "accepted") return Outcome::Accepted;
  if (s == "rejected") return Outcome::Rejected;
  if (s == "reverted") return Outcome::Reverted;
  throw Error(ErrorCode::Malformed, "unknown outcome " + std::string(s));
}

// -- StoreOverlay --------------------------------------------------------------

std::optional<std::string> StoreOverlay::get(const std::string& key) const {
  if (auto it = writes_.find(key); it != writes_.end()) return it->second;
  if (auto it = base_->find(key); it != base_->end()) return it->second;
  return std::nullopt;
}

void StoreOverlay::put(const std::string& key, std::string value) { writes_[key] = std::move(value); }

void StoreOverlay::erase(const std::string& key) { writes_[key] = std::nullopt; }

void StoreOverlay::apply_to(Store& store) const {
  for (const auto& [k, v] : writes_) {
    if (v)
      store[k] = *v;
    else
      store.erase(k);
  }
}

Store StoreOverlay::materialize() const {
  Store out = *base_;
  apply_to(out);
  return out;
}

std::string StoreOverlay::encode() const {
  std::string out = "{";
  bool first = true;
  auto b = base_->begin();
  auto w = writes_.begin();
  while (b != base_->end() || w != writes_.end()) {
    if (w == writes_.end() || (b != base_->end() && b->first < w->first)) {
      append_entry(out, first, b->first, b->second);
      ++b;
      continue;
    }
    if (b != base_->end() && b->first == w->first) ++b;
    if (w->second) append_entry(out, first, w->first, *w->second);
    ++w;
  }
  out.push_back('}');
  return out;
}

std::shared_ptr<const ContractLogic> logic_by_name(std::string_view name) {
  static const auto fastmoney = std::make_shared<const FastMoneyLogic>();
  static const auto cas = std::make_shared<const CasLogic>();
  static const auto deployer = std::make_shared<const DeployerLogic>();
  if (name == "fastmoney") return fastmoney;
  if (name == "cas") return cas;
  if (name == "deployer") return deployer;
  throw Error(ErrorCode::InvalidArgument, "unknown contract logic " + std::string(name));
}

Digest contract_fingerprint(const Store& store) { return fingerprint_bytes(encode_store(store)); }

std::pair<ContractState, ExecResult> contract_execute(const ContractState& state, const ContractLogic& logic,
                                                      const Envelope& tx) {
  if (tx.payload.recipient != state.contract_id)
    throw Error(ErrorCode::UnknownContract, "transaction addressed to " + tx.payload.recipient.str());
  StoreOverlay overlay(state.store);
  ExecResult result = safe_execute(logic, overlay, tx);
  ContractState next = state;
  if (result.outcome == Outcome::Accepted) overlay.apply_to(next.store);
  return {std::move(next), std::move(result)};
}

StateClone contract_clone(const ContractState& state) {
  static std::atomic<std::uint64_t> counter{1};
  return {counter.fetch_add(1), state.contract_id, std::make_shared<const Store>(state.store)};
}

// -- built-in helpers ----------------------------------------------------------

namespace fastmoney {
std::string balance_key(const Address& account) { return "balance/" + account.str(); }

std::uint64_t balance_of(const Store& store, const Address& account) {
  auto it = store.find(balance_key(account));
  return it == store.end() ? 0 : parse_u64(it->second);
}

Store genesis_store(const std::vector<std::pair<Address, std::uint64_t>>& allocation) {
  Store s;
  std::uint64_t total = 0;
  for (const auto& [addr, amount] : allocation) {
    if (total > std::numeric_limits<std::uint64_t>::max() - amount)
      throw Error(ErrorCode::Config, "genesis allocation overflows the supply");
    total += amount;
    auto key = balance_key(addr);
    std::uint64_t prior = s.contains(key) ? parse_u64(s[key]) : 0;
    s[key] = std::to_string(prior + amount);
  }
  return s;
}

Json transfer_data(const Address& to, std::uint64_t amount) {
  return Json{{"op", "transfer"}, {"to", to.str()}, {"amount", amount}};
}

std::uint64_t total_supply(const Store& store) {
  std::uint64_t total = 0;
  for (const auto& [k, v] : store)
    if (k.starts_with("balance/")) total += parse_u64(v);
  return total;
}
}  // namespace fastmoney

namespace cas {
std::string blob_key(const Digest& hash) { return "blob/" + hash.hex(); }
std::string ref_key(const Digest& hash) { return "ref/" + hash.hex(); }

Digest put(StoreOverlay& store, std::string_view blob) {
  Digest hash = fingerprint_bytes(blob);
  auto rk = ref_key(hash);
  auto existing = store.get(rk);
  if (existing) {
    store.put(rk, std::to_string(parse_u64(*existing) + 1));
  } else {
    store.put(blob_key(hash), std::string(blob));
    store.put(rk, "1");
  }
  return hash;
}

std::string get(const Store& store, const Digest& hash) {
  auto it = store.find(blob_key(hash));
  if (it == store.end()) throw Error(ErrorCode::NotFound, "no CAS entry " + hash.hex());
  return it->second;
}

std::uint64_t refcount(const Store& store, const Digest& hash) {
  auto it = store.find(ref_key(hash));
  if (it == store.end()) throw Error(ErrorCode::NotFound, "no CAS entry " + hash.hex());
  return parse_u64(it->second);
}

void addref(StoreOverlay& store, const Digest& hash) {
  auto raw = store.get(ref_key(hash));
  if (!raw) throw Error(ErrorCode::NotFound, "no CAS entry " + hash.hex());
  store.put(ref_key(hash), std::to_string(parse_u64(*raw) + 1));
}

void release(StoreOverlay& store, const Digest& hash) {
  auto raw = store.get(ref_key(hash));
  if (!raw) throw Error(ErrorCode::NotFound, "no CAS entry " + hash.hex());
  auto count = parse_u64(*raw);
  if (count == 0) throw Error(ErrorCode::RefcountUnderflow, "refcount already zero for " + hash.hex());
  store.put(ref_key(hash), std::to_string(count - 1));
}

std::size_t purge_unreferenced(Store& store) {
  std::vector<std::string> doomed;
  for (auto it = store.lower_bound("ref/"); it != store.end() && it->first.starts_with("ref/"); ++it)
    if (it->second == "0") doomed.push_back(it->first.substr(4));
  for (const auto& hex : doomed) {
    store.erase("ref/" + hex);
    store.erase("blob/" + hex);
  }
  return doomed.size();
}

Json put_data(std::string_view blob) { return Json{{"op", "put"}, {"blob", to_hex(as_bytes(blob))}}; }

Json ref_data(std::string_view op, const Digest& hash) {
  return Json{{"op", std::string(op)}, {"hash", hash.hex()}};
}
}  // namespace cas

namespace deployer {
Json deploy_data(std::string_view logic, std::string_view salt, bool destroyable, const Store& initial_store) {
  return Json{{"logic", std::string(logic)},
              {"salt", std::string(salt)},
              {"destroyable", destroyable},
              {"initial", store_to_json(initial_store)}};
}

Json destroy_data(const Address& contract) { return Json{{"op", "destroy"}, {"contract", contract.str()}}; }
}  // namespace deployer

// -- Runtime -------------------------------------------------------------------

Digest ContractInstance::fingerprint() const {
  std::shared_lock lock(mutex_);
  return fingerprint_locked();
}

Digest ContractInstance::fingerprint_locked() const {
  std::lock_guard cache(cache_mutex_);
  if (!cached_fingerprint_) cached_fingerprint_ = contract_fingerprint(state.store);
  return *cached_fingerprint_;
}

std::unique_ptr<Runtime> Runtime::genesis(const std::vector<std::pair<Address, std::uint64_t>>& allocation) {
  auto rt = std::make_unique<Runtime>();
  auto make_system = [](const Address& id, std::string_view logic) {
    ContractDescriptor d;
    d.contract_id = id;
    d.kind = ContractKind::System;
    d.owner = Address{};
    d.destroyable = false;
    d.logic = std::string(logic);
    d.code_ref = code_ref_for(logic);
    return d;
  };
  auto deployer = make_system(system_contracts::deployer_id(), "deployer");
  auto cas_d = make_system(system_contracts::cas_id(), "cas");

  Store registry;
  registry[registry_key(deployer.contract_id)] = canonical_dump(deployer.to_json());
  registry[registry_key(cas_d.contract_id)] = canonical_dump(cas_d.to_json());

  if (!allocation.empty()) {
    ContractDescriptor fm;
    fm.contract_id = system_contracts::genesis_fastmoney_id();
    fm.kind = ContractKind::Community;
    fm.owner = Address{};
    fm.destroyable = false;
    fm.logic = "fastmoney";
    fm.code_ref = code_ref_for("fastmoney");
    registry[registry_key(fm.contract_id)] = canonical_dump(fm.to_json());
    rt->insert(fm, fastmoney::genesis_store(allocation), 0, false);
  }
  rt->insert(deployer, std::move(registry), 0, false);
  rt->insert(cas_d, {}, 0, false);
  return rt;
}

std::unique_ptr<Runtime> Runtime::from_archive(const std::vector<ArchivedContract>& contracts) {
  auto rt = std::make_unique<Runtime>();
  for (const auto& c : contracts) {
    if (rt->has_contract(c.descriptor.contract_id))
      throw Error(ErrorCode::MalformedArchive, "duplicate contract " + c.descriptor.contract_id.str());
    rt->insert(c.descriptor, c.store, c.version, c.excluded);
  }
  return rt;
}

std::vector<Runtime::ArchivedContract> Runtime::export_all() const {
  std::vector<std::shared_ptr<ContractInstance>> all;
  {
    std::shared_lock lock(table_mutex_);
    for (const auto& [id, inst] : contracts_) all.push_back(inst);
  }
  std::vector<ArchivedContract> out;
  for (const auto& inst : all) {
    std::shared_lock lock(inst->mutex_);
    out.push_back({inst->descriptor, inst->state.store, inst->version, inst->state.excluded_from_snapshot});
  }
  return out;
}

void Runtime::insert(ContractDescriptor d, Store store, std::uint64_t version, bool excluded) {
  auto inst = std::make_shared<ContractInstance>();
  inst->logic = logic_by_name(d.logic);
  inst->state.contract_id = d.contract_id;
  inst->state.store = std::move(store);
  inst->state.excluded_from_snapshot = excluded;
  inst->version = version;
  inst->descriptor = std::move(d);
  std::unique_lock lock(table_mutex_);
  contracts_[inst->descriptor.contract_id] = std::move(inst);
}

std::shared_ptr<ContractInstance> Runtime::find(const Address& id) const {
  std::shared_lock lock(table_mutex_);
  auto it = contracts_.find(id);
  if (it == contracts_.end()) throw Error(ErrorCode::UnknownContract, id.str());
  return it->second;
}

bool Runtime::has_contract(const Address& id) const {
  std::shared_lock lock(table_mutex_);
  return contracts_.contains(id);
}

std::vector<Address> Runtime::contract_ids() const {
  std::shared_lock lock(table_mutex_);
  std::vector<Address> ids;
  for (const auto& [id, _] : contracts_) ids.push_back(id);
  return ids;
}

ContractDescriptor Runtime::descriptor(const Address& id) const { return find(id)->descriptor; }

std::uint64_t Runtime::version(const Address& id) const {
  auto inst = find(id);
  std::shared_lock lock(inst->mutex_);
  return inst->version;
}

Store Runtime::store_copy(const Address& id) const {
  auto inst = find(id);
  std::shared_lock lock(inst->mutex_);
  return inst->state.store;
}

std::optional<std::string> Runtime::read(const Address& id, const std::string& key) const {
  auto inst = find(id);
  std::shared_lock lock(inst->mutex_);
  auto it = inst->state.store.find(key);
  if (it == inst->state.store.end()) return std::nullopt;
  return it->second;
}

PreparedExecution Runtime::prepare(const Envelope& tx) const {
  auto inst = find(tx.payload.recipient);
  std::shared_lock lock(inst->mutex_);
  PreparedExecution p;
  p.contract_id = inst->descriptor.contract_id;
  p.base_version = inst->version;
  StoreOverlay overlay(inst->state.store);
  p.result = safe_execute(*inst->logic, overlay, tx);
  if (p.result.outcome == Outcome::Accepted && !overlay.empty()) {
    p.post_fingerprint = fingerprint_bytes(overlay.encode());
    p.writes = std::move(overlay);
  } else {
    if (p.result.outcome != Outcome::Accepted) p.result.effects.clear();
    p.post_fingerprint = inst->fingerprint_locked();
  }
  return p;
}

void Runtime::commit(const PreparedExecution& prepared) {
  if (prepared.result.outcome == Outcome::Reverted) return;
  auto inst = find(prepared.contract_id);
  {
    std::unique_lock lock(inst->mutex_);
    if (inst->version != prepared.base_version)
      throw Error(ErrorCode::InvalidArgument, "prepared execution is stale for " + prepared.contract_id.str());
    if (prepared.writes) {
      prepared.writes->apply_to(inst->state.store);
      std::lock_guard cache(inst->cache_mutex_);
      inst->cached_fingerprint_ = prepared.post_fingerprint;
    }
    ++inst->version;
  }
  for (const auto& effect : prepared.result.effects) {
    if (effect.kind == RuntimeEffect::Kind::Create) {
      insert(effect.descriptor, effect.initial_store, 0, false);
    } else {
      std::unique_lock lock(table_mutex_);
      contracts_.erase(effect.descriptor.contract_id);
    }
  }
}

ExecResult Runtime::apply(const Envelope& tx) {
  auto prepared = prepare(tx);
  commit(prepared);
  return prepared.result;
}

Digest Runtime::fingerprint(const Address& id) const { return find(id)->fingerprint(); }

StateClone Runtime::clone(const Address& id) const {
  auto inst = find(id);
  std::shared_lock lock(inst->mutex_);
  return {next_clone_id_.fetch_add(1), id, std::make_shared<const Store>(inst->state.store)};
}

void Runtime::set_excluded(const Address& id, bool excluded) {
  auto inst = find(id);
  std::unique_lock lock(inst->mutex_);
  inst->state.excluded_from_snapshot = excluded;
}

bool Runtime::excluded(const Address& id) const {
  auto inst = find(id);
  std::shared_lock lock(inst->mutex_);
  return inst->state.excluded_from_snapshot;
}

void Runtime::clear_exclusions() {
  for (const auto& id : contract_ids()) set_excluded(id, false);
}

void Runtime::on_report_boundary() {
  auto inst = find(system_contracts::cas_id());
  std::unique_lock lock(inst->mutex_);
  if (cas::purge_unreferenced(inst->state.store) > 0) {
    std::lock_guard cache(inst->cache_mutex_);
    inst->cached_fingerprint_.reset();
  }
}

}  // namespace blcm
