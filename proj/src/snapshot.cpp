#include "blcm/snapshot.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace blcm {
namespace {

Json entries_to_json(const std::vector<FingerprintEntry>& entries) {
  Json arr = Json::array();
  for (const auto& e : entries) arr.push_back(Json{{"contract_id", e.contract_id.str()}, {"digest", e.digest.hex()}});
  return arr;
}

Json contract_to_json(const Runtime::ArchivedContract& c) {
  return Json{{"descriptor", c.descriptor.to_json()},
              {"store", store_to_json(c.store)},
              {"version", c.version},
              {"excluded", c.excluded}};
}

Runtime::ArchivedContract contract_from_json(const Json& j) {
  Runtime::ArchivedContract c;
  c.descriptor = ContractDescriptor::from_json(j.at("descriptor"));
  c.store = decode_store(j.at("store"));
  c.version = j.at("version").get<std::uint64_t>();
  c.excluded = j.at("excluded").get<bool>();
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  if (!in) throw Error(ErrorCode::ArchiveUnavailable, "cannot read " + p.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace

Json Snapshot::to_json() const {
  return Json{{"cycle", cycle},
              {"entries", entries_to_json(entries)},
              {"combined", combined.hex()},
              {"first_seq", first_seq},
              {"last_seq", last_seq}};
}

Snapshot Snapshot::from_json(const Json& j) {
  try {
    Snapshot s;
    s.cycle = j.at("cycle").get<std::int64_t>();
    for (const auto& e : j.at("entries"))
      s.entries.push_back({Address::parse(e.at("contract_id").get<std::string>()),
                           Digest::from_hex(e.at("digest").get<std::string>())});
    s.combined = Digest::from_hex(j.at("combined").get<std::string>());
    s.first_seq = j.at("first_seq").get<std::uint64_t>();
    s.last_seq = j.at("last_seq").get<std::uint64_t>();
    return s;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::MalformedArchive, std::string("snapshot: ") + ex.what());
  } catch (const Error& ex) {
    throw Error(ErrorCode::MalformedArchive, std::string("snapshot: ") + ex.what());
  }
}

Json SnapshotArchive::to_json() const {
  Json contracts_json = Json::array();
  for (const auto& c : contracts) contracts_json.push_back(contract_to_json(c));
  return Json{{"cell", cell.str()}, {"snapshot", snapshot.to_json()}, {"contracts", contracts_json}};
}

SnapshotArchive SnapshotArchive::from_json(const Json& j) {
  try {
    SnapshotArchive a;
    a.cell = Address::parse(j.at("cell").get<std::string>());
    a.snapshot = Snapshot::from_json(j.at("snapshot"));
    for (const auto& c : j.at("contracts")) a.contracts.push_back(contract_from_json(c));
    for (std::size_t i = 1; i < a.contracts.size(); ++i)
      if (!(a.contracts[i - 1].descriptor.contract_id < a.contracts[i].descriptor.contract_id))
        throw Error(ErrorCode::MalformedArchive, "archive contracts are not sorted");
    return a;
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::MalformedArchive, std::string("archive: ") + ex.what());
  } catch (const Error& ex) {
    if (ex.code() == ErrorCode::MalformedArchive) throw;
    throw Error(ErrorCode::MalformedArchive, std::string("archive: ") + ex.what());
  }
}

std::string SnapshotArchive::encode() const { return canonical_dump(to_json()); }

SnapshotArchive SnapshotArchive::decode(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::MalformedArchive, std::string("archive is not valid JSON: ") + ex.what());
  }
  return from_json(j);
}

Snapshot SnapshotArchive::recompute() const {
  Snapshot s;
  s.cycle = snapshot.cycle;
  s.first_seq = snapshot.first_seq;
  s.last_seq = snapshot.last_seq;
  for (const auto& c : contracts)
    if (!c.excluded) s.entries.push_back({c.descriptor.contract_id, contract_fingerprint(c.store)});
  s.combined = combine_fingerprints(s.entries);
  return s;
}

void SnapshotArchive::write_directory(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  Json manifest{{"cell", cell.str()}, {"snapshot", snapshot.to_json()}, {"contracts", Json::array()}};
  for (const auto& c : contracts) {
    auto name = c.descriptor.contract_id.str() + ".json";
    std::ofstream(dir / name) << canonical_dump(contract_to_json(c)) << '\n';
    manifest["contracts"].push_back(name);
  }
  std::ofstream(dir / "manifest.json") << canonical_dump(manifest) << '\n';
}

SnapshotArchive SnapshotArchive::read_directory(const std::filesystem::path& dir) {
  Json manifest;
  try {
    manifest = Json::parse(slurp(dir / "manifest.json"));
    Json whole{{"cell", manifest.at("cell")}, {"snapshot", manifest.at("snapshot")}, {"contracts", Json::array()}};
    for (const auto& name : manifest.at("contracts"))
      whole["contracts"].push_back(Json::parse(slurp(dir / name.get<std::string>())));
    return from_json(whole);
  } catch (const Json::exception& ex) {
    throw Error(ErrorCode::MalformedArchive, std::string("archive directory: ") + ex.what());
  }
}

SnapshotArchive make_archive(const Address& cell, std::int64_t cycle, std::vector<Runtime::ArchivedContract> contracts,
                             std::uint64_t first_seq, std::uint64_t last_seq) {
  std::sort(contracts.begin(), contracts.end(), [](const auto& a, const auto& b) {
    return a.descriptor.contract_id < b.descriptor.contract_id;
  });
  SnapshotArchive a;
  a.cell = cell;
  a.contracts = std::move(contracts);
  a.snapshot.cycle = cycle;
  a.snapshot.first_seq = first_seq;
  a.snapshot.last_seq = last_seq;
  auto computed = a.recompute();
  a.snapshot.entries = std::move(computed.entries);
  a.snapshot.combined = computed.combined;
  return a;
}

SnapshotArchive genesis_archive(const std::vector<std::pair<Address, std::uint64_t>>& allocation) {
  auto rt = Runtime::genesis(allocation);
  return make_archive(Address{}, -1, rt->export_all(), 1, 0);
}

}  // namespace blcm
