#include "blcm/config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace blcm {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  for (std::string tok; in >> tok;) out.push_back(tok);
  return out;
}

template <typename T>
T parse_int(std::string_view s, std::string_view key) {
  T v{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw Error(ErrorCode::Config, std::string(key) + ": expected an integer, got '" + std::string(s) + "'");
  return v;
}

}  // namespace

DeploymentConfig DeploymentConfig::parse(std::string_view text) {
  DeploymentConfig cfg;
  bool have_id = false;
  std::size_t line_no = 0;
  std::istringstream in{std::string(text)};
  for (std::string raw; std::getline(in, raw);) {
    ++line_no;
    std::string_view line = raw;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string_view::npos)
      throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    auto words = split_ws(value);

    try {
      if (key == "deployment_id") {
        cfg.invariants.deployment_id = DeploymentId::from_hex(value);
        have_id = true;
      } else if (key == "lambda") {
        cfg.invariants.lambda = parse_int<Timestamp>(value, key);
      } else if (key == "t0") {
        cfg.invariants.t0 = parse_int<Timestamp>(value, key);
      } else if (key == "delta_ms") {
        cfg.invariants.delta = std::chrono::milliseconds(parse_int<std::int64_t>(value, key));
      } else if (key == "delta") {
        cfg.invariants.delta = std::chrono::seconds(parse_int<std::int64_t>(value, key));
      } else if (key == "miss_threshold") {
        cfg.invariants.miss_threshold = parse_int<int>(value, key);
      } else if (key == "skew") {
        cfg.skew = parse_int<Timestamp>(value, key);
      } else if (key == "retention") {
        cfg.snapshot_retention = parse_int<std::size_t>(value, key);
      } else if (key == "anchor") {
        if (words.empty()) throw Error(ErrorCode::Config, "anchor needs an address");
        cfg.anchor_address = Address::parse(words[0]);
        if (words.size() > 1) cfg.anchor_url = words[1];
      } else if (key == "cell") {
        if (words.empty()) throw Error(ErrorCode::Config, "cell needs an address");
        auto addr = Address::parse(words[0]);
        cfg.invariants.cell_addresses.push_back(addr);
        if (words.size() > 1) cfg.cell_urls[addr] = words[1];
      } else if (key == "allocation") {
        if (words.size() != 2) throw Error(ErrorCode::Config, "allocation = <address> <amount>");
        cfg.allocation.emplace_back(Address::parse(words[0]), parse_int<std::uint64_t>(words[1], key));
      } else if (key == "subscribe") {
        if (words.size() != 2) throw Error(ErrorCode::Config, "subscribe = <cell> <client|*>");
        auto cell = Address::parse(words[0]);
        if (words[1] == "*")
          cfg.open_cells.insert(cell);
        else
          cfg.subscriptions[cell].insert(Address::parse(words[1]));
      } else {
        throw Error(ErrorCode::Config, "unknown key '" + std::string(key) + "'");
      }
    } catch (const Error& e) {
      if (e.code() == ErrorCode::Config) throw;
      throw Error(ErrorCode::Config, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_id) throw Error(ErrorCode::Config, "deployment_id is required");
  if (cfg.anchor_address.is_zero()) throw Error(ErrorCode::Config, "anchor address is required");
  cfg.invariants.validate();
  return cfg;
}

DeploymentConfig DeploymentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse(buf.str());
}

std::string DeploymentConfig::serialize() const {
  std::ostringstream out;
  const auto& inv = invariants;
  out << "deployment_id = " << inv.deployment_id.hex() << "\n"
      << "lambda = " << inv.lambda << "\n"
      << "t0 = " << inv.t0 << "\n"
      << "delta_ms = " << inv.delta.count() << "\n"
      << "miss_threshold = " << inv.miss_threshold << "\n"
      << "skew = " << skew << "\n"
      << "retention = " << snapshot_retention << "\n"
      << "anchor = " << anchor_address.str();
  if (!anchor_url.empty()) out << " " << anchor_url;
  out << "\n";
  for (const auto& cell : inv.cell_addresses) {
    out << "cell = " << cell.str();
    if (auto it = cell_urls.find(cell); it != cell_urls.end()) out << " " << it->second;
    out << "\n";
  }
  for (const auto& [addr, amount] : allocation) out << "allocation = " << addr.str() << " " << amount << "\n";
  for (const auto& cell : open_cells) out << "subscribe = " << cell.str() << " *\n";
  for (const auto& [cell, clients] : subscriptions)
    for (const auto& c : clients) out << "subscribe = " << cell.str() << " " << c.str() << "\n";
  return out.str();
}

void DeploymentConfig::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Config, "cannot write " + path.string());
  out << serialize();
}

bool DeploymentConfig::is_subscribed(const Address& cell, const Address& client) const {
  if (open_cells.contains(cell)) return true;
  auto it = subscriptions.find(cell);
  if (it == subscriptions.end()) return true;
  return it->second.contains(client);
}

std::size_t DeploymentConfig::cell_index(const Address& cell) const {
  const auto& cells = invariants.cell_addresses;
  for (std::size_t i = 0; i < cells.size(); ++i)
    if (cells[i] == cell) return i;
  throw Error(ErrorCode::NotMember, cell.str() + " is not a consortium cell");
}

}  // namespace blcm
