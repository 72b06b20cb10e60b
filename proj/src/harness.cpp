#include "blcm/harness.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <iostream>
#include <random>
#include <thread>

namespace blcm {

// -- client helpers ------------------------------------------------------------

Envelope make_transfer(const KeyPair& from, const Address& to, std::uint64_t amount, Timestamp now,
                       const Address& contract) {
  return make_envelope(from, contract, Opcode::TxCommit, fastmoney::transfer_data(to, amount), now);
}

Envelope make_cas_put(const KeyPair& from, std::string_view blob, Timestamp now) {
  return make_envelope(from, system_contracts::cas_id(), Opcode::CasPut, cas::put_data(blob), now);
}

Envelope make_cas_ref(const KeyPair& from, std::string_view op, const Digest& hash, Timestamp now) {
  return make_envelope(from, system_contracts::cas_id(), Opcode::TxCommit, cas::ref_data(op, hash), now);
}

Envelope make_deploy(const KeyPair& from, std::string_view logic, std::string_view salt, bool destroyable,
                     const Store& initial, Timestamp now) {
  return make_envelope(from, system_contracts::deployer_id(), Opcode::Deploy,
                       deployer::deploy_data(logic, salt, destroyable, initial), now);
}

std::vector<KeyPair> make_clients(std::size_t n) {
  std::vector<KeyPair> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(KeyPair::generate());
  return out;
}

std::vector<std::pair<Address, std::uint64_t>> allocation_for(const std::vector<KeyPair>& clients,
                                                              std::uint64_t amount) {
  std::vector<std::pair<Address, std::uint64_t>> out;
  for (const auto& k : clients) out.emplace_back(k.address, amount);
  return out;
}

// -- consortium ------------------------------------------------------------------

namespace {

int free_port(const std::string& host) {
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw Error(ErrorCode::Config, "socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = 0;
  ::inet_pton(AF_INET, host.c_str(), &addr.sin_addr);
  socklen_t len = sizeof(addr);
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0 ||
      ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len) != 0) {
    ::close(fd);
    throw Error(ErrorCode::Config, "cannot find a free port on " + host);
  }
  ::close(fd);
  return ntohs(addr.sin_port);
}

class LocalSource final : public AuditSource {
 public:
  explicit LocalSource(std::shared_ptr<Cell> cell) : cell_(std::move(cell)) {}
  Address cell() const override { return cell_->address(); }
  SnapshotArchive snapshot(std::int64_t cycle) override {
    if (cell_->fault().behavior == FaultBehavior::Offline) throw Error(ErrorCode::ArchiveUnavailable, "cell offline");
    auto a = cell_->archive(cycle);
    if (!a) throw Error(ErrorCode::ArchiveUnavailable, "no snapshot for cycle " + std::to_string(cycle));
    // Go through the wire encoding, as a remote auditor would.
    return SnapshotArchive::decode(a->encode());
  }
  std::vector<LedgerEntry> ledger(std::uint64_t first, std::uint64_t last) override {
    return cell_->ledger_slice(first, last);
  }

 private:
  std::shared_ptr<Cell> cell_;
};

class HttpSource final : public AuditSource {
 public:
  HttpSource(Address cell, std::string url) : cell_(cell), client_(std::move(url)) {}
  Address cell() const override { return cell_; }
  SnapshotArchive snapshot(std::int64_t cycle) override { return client_.snapshot(cycle); }
  std::vector<LedgerEntry> ledger(std::uint64_t first, std::uint64_t last) override {
    return client_.ledger(first, last);
  }

 private:
  Address cell_;
  CellClient client_;
};

}  // namespace

std::shared_ptr<AuditSource> local_audit_source(std::shared_ptr<Cell> cell) {
  return std::make_shared<LocalSource>(std::move(cell));
}

std::shared_ptr<AuditSource> http_audit_source(const Address& cell, std::string url) {
  return std::make_shared<HttpSource>(cell, std::move(url));
}

std::unique_ptr<Consortium> Consortium::spawn(ConsortiumOptions options) {
  std::unique_ptr<Consortium> c(new Consortium());
  c->options_ = options;
  c->clock_ = options.clock ? options.clock : std::make_shared<SystemClock>();
  c->client_link_delay_ = options.client_link_delay;

  auto& cfg = c->config_;
  auto& inv = cfg.invariants;
  inv.deployment_id = DeploymentId::from_span(random_nonce().view());
  inv.lambda = options.lambda;
  if (options.t0 != 0) {
    inv.t0 = options.t0;
  } else {
    auto now = c->clock_->now();
    inv.t0 = (now / options.lambda + 1) * options.lambda;
  }
  inv.delta = options.delta;
  inv.miss_threshold = options.miss_threshold;
  for (std::size_t i = 0; i < options.size; ++i) {
    c->keys_.push_back(KeyPair::generate());
    inv.cell_addresses.push_back(c->keys_.back().address);
  }
  cfg.anchor_address = KeyPair::generate().address;
  cfg.allocation = options.allocation;
  cfg.snapshot_retention = options.retention;
  inv.validate();

  if (options.http) {
    int next = options.base_port;
    auto port = [&] { return next > 0 ? next++ : free_port(options.host); };
    cfg.anchor_url = "http://" + options.host + ":" + std::to_string(port());
    for (const auto& a : inv.cell_addresses) cfg.cell_urls[a] = "http://" + options.host + ":" + std::to_string(port());
  }

  std::optional<std::filesystem::path> anchor_log;
  if (options.data_dir) {
    std::filesystem::create_directories(*options.data_dir);
    cfg.save(*options.data_dir / "deployment.conf");
    for (std::size_t i = 0; i < options.size; ++i)
      std::ofstream(*options.data_dir / ("cell-" + std::to_string(i) + ".key"))
          << to_hex(c->keys_[i].private_key) << '\n';
    anchor_log = *options.data_dir / "anchor.log";
  }
  c->anchor_ = std::make_shared<Anchor>(inv.cell_addresses, *c->clock_, anchor_log);

  if (options.http) {
    auto [host, port] = parse_url(cfg.anchor_url);
    c->anchor_server_ = std::make_unique<AnchorServer>(c->anchor_, host, port);
  } else {
    c->local_net_ = std::make_unique<LocalNetwork>(options.cell_link_delay);
  }

  for (std::size_t i = 0; i < options.size; ++i) {
    auto opts = options.cell_options;
    if (options.data_dir) opts.ledger_path = *options.data_dir / ("cell-" + std::to_string(i) + ".ledger");
    PeerTransport* net = c->local_net_.get();
    AnchorApi* anchor = c->anchor_.get();
    if (options.http) {
      c->http_nets_.push_back(std::make_unique<HttpPeerTransport>(cfg.cell_urls, inv.delta + std::chrono::seconds(1),
                                                                  options.cell_link_delay));
      net = c->http_nets_.back().get();
      c->anchor_clients_.push_back(std::make_unique<HttpAnchorClient>(cfg.anchor_url));
      anchor = c->anchor_clients_.back().get();
    }
    auto cell = std::make_shared<Cell>(cfg, c->keys_[i], *c->clock_, *net, *anchor, opts);
    if (c->local_net_) c->local_net_->attach(cell);
    c->cells_.push_back(cell);
  }
  if (options.http) {
    for (std::size_t i = 0; i < options.size; ++i) {
      auto [host, port] = parse_url(cfg.cell_urls.at(inv.cell_addresses[i]));
      c->servers_.push_back(std::make_unique<CellServer>(c->cells_[i], host, port));
    }
  }
  if (options.schedule)
    for (auto& cell : c->cells_) cell->start();
  return c;
}

Consortium::~Consortium() { stop(); }

void Consortium::stop() {
  for (auto& cell : cells_) cell->stop();
  for (auto& s : servers_) s->stop();
  if (anchor_server_) anchor_server_->stop();
}

std::string Consortium::cell_url(std::size_t i) const {
  auto it = config_.cell_urls.find(keys_.at(i).address);
  return it == config_.cell_urls.end() ? std::string() : it->second;
}

std::string Consortium::anchor_url() const { return config_.anchor_url; }

Receipt Consortium::submit(std::size_t i, const Envelope& tx) {
  if (options_.http) return CellClient(cell_url(i), std::chrono::seconds(60), client_link_delay_).commit(tx);
  auto hop = [&] {
    if (client_link_delay_.count() > 0) std::this_thread::sleep_for(client_link_delay_);
  };
  hop();
  auto r = cells_.at(i)->handle_commit(tx);
  hop();
  return r;
}

std::uint64_t Consortium::escape(const Envelope& tx) {
  if (options_.http) return HttpAnchorClient(anchor_url()).submit_contingency(tx);
  return anchor_->submit_contingency(tx);
}

void Consortium::run_stage(std::int64_t cycle) {
  auto deadline = deadline_of_cycle(cycle, config_.invariants);
  for (auto& cell : cells_) cell->run_report_stage(deadline);
  for (auto& cell : cells_) {
    try {
      cell->pull_contingency();
    } catch (const Error& e) {
      std::cerr << "contingency pull on " << cell->address().str() << ": " << e.what() << "\n";
    }
  }
}

bool Consortium::settle(std::chrono::milliseconds timeout) {
  auto deadline = std::chrono::steady_clock::now() + timeout;
  // Two passes: a decision sent by a cell checked later can still be in
  // flight to one checked earlier.
  for (int pass = 0; pass < 2; ++pass)
    for (auto& cell : cells_) {
      auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0 || !cell->wait_idle(left)) return false;
    }
  return true;
}

void Consortium::inject_fault(std::size_t i, Fault fault) {
  if (options_.http) {
    Json j{{"behavior", fault_name(fault.behavior)}, {"delay_ms", fault.delay.count()}};
    if (fault.target) j["target"] = fault.target->str();
    if (fault.until)
      j["duration_ms"] = std::chrono::duration_cast<std::chrono::milliseconds>(*fault.until -
                                                                               std::chrono::steady_clock::now())
                             .count();
    CellClient(cell_url(i)).inject_fault(j);
    return;
  }
  cells_.at(i)->inject_fault(std::move(fault));
}

std::vector<std::shared_ptr<AuditSource>> Consortium::audit_sources() {
  std::vector<std::shared_ptr<AuditSource>> out;
  for (std::size_t i = 0; i < cells_.size(); ++i)
    out.push_back(options_.http ? http_audit_source(keys_[i].address, cell_url(i)) : local_audit_source(cells_[i]));
  return out;
}

void Consortium::set_cell_link_delay(std::chrono::microseconds d) {
  if (local_net_) local_net_->set_link_delay(d);
}

std::vector<SnapshotArchive> replay_archives(const DeploymentConfig& config, const Address& cell,
                                             const std::vector<LedgerEntry>& ledger,
                                             const std::vector<Snapshot>& headers) {
  auto runtime = Runtime::genesis(config.allocation);
  std::vector<SnapshotArchive> out;
  std::size_t next = 0;
  for (const auto& h : headers) {
    for (; next < ledger.size() && ledger[next].seq <= h.last_seq; ++next)
      if (ledger[next].outcome != Outcome::Reverted) runtime->apply(ledger[next].envelope);
    runtime->on_report_boundary();
    out.push_back(make_archive(cell, h.cycle, runtime->export_all(), h.first_seq, h.last_seq));
  }
  return out;
}

// -- load ------------------------------------------------------------------------

double percentile(std::vector<double> values, double q) {
  if (values.empty()) return 0;
  std::sort(values.begin(), values.end());
  auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(values.size())));
  return values[std::clamp<std::size_t>(rank, 1, values.size()) - 1];
}

Json LatencyStats::summary() const {
  return Json{{"transactions", samples.size()},
              {"accepted", accepted},
              {"failures", failures},
              {"invalid_receipts", invalid_receipts},
              {"p50_ms", static_cast<std::int64_t>(std::llround(p50 * 1000))},
              {"p90_ms", static_cast<std::int64_t>(std::llround(p90 * 1000))},
              {"p99_ms", static_cast<std::int64_t>(std::llround(p99 * 1000))},
              {"elapsed_ms", static_cast<std::int64_t>(std::llround(elapsed * 1000))},
              {"throughput_tps", static_cast<std::int64_t>(std::llround(throughput))}};
}

void LatencyStats::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::Config, "cannot write " + path.string());
  out << "index,cell,latency_s,outcome,revert_reason,attempts\n";
  for (const auto& s : samples)
    out << s.index << ',' << s.cell << ',' << s.latency << ',' << s.outcome << ',' << s.revert_reason << ','
        << s.attempts << '\n';
}

LatencyStats run_load(const LoadProfile& profile, std::size_t n_cells, const std::vector<KeyPair>& clients,
                      const Submitter& submit, const Clock& clock, const DeploymentInvariants& inv) {
  if (clients.empty() && profile.contract == "fastmoney") throw Error(ErrorCode::InvalidArgument, "no funded clients");
  if (n_cells == 0) throw Error(ErrorCode::InvalidArgument, "no cells");
  if (profile.contract != "fastmoney" && profile.contract != "cas")
    throw Error(ErrorCode::InvalidArgument, "unknown load contract '" + profile.contract + "'");

  LatencyStats stats;
  stats.samples.resize(profile.n_tx);
  std::atomic<std::size_t> invalid{0};

  auto one = [&](std::size_t i, std::mt19937_64& rng) {
    auto& s = stats.samples[i];
    s.index = i;
    s.cell = i % n_cells;
    const auto& key = clients.empty() ? KeyPair::generate() : clients[i % clients.size()];
    Envelope tx;
    if (profile.contract == "fastmoney") {
      tx = make_transfer(key, KeyPair::generate().address, 1, clock.now());
    } else {
      std::string blob(64, '\0');
      for (auto& ch : blob) ch = static_cast<char>(rng());
      tx = make_cas_put(key, blob, clock.now());
    }
    auto start = std::chrono::steady_clock::now();
    std::optional<Receipt> receipt;
    for (s.attempts = 1;; ++s.attempts) {
      try {
        receipt = submit(s.cell, tx);
        if (receipt->outcome != Outcome::Reverted) break;
        s.revert_reason = receipt->revert_reason;
      } catch (const Error& e) {
        receipt.reset();
        s.revert_reason = std::string(error_name(e.code()));
      }
      if (s.attempts > profile.retries) break;
      std::uniform_int_distribution<int> backoff(5, 20 * s.attempts);
      std::this_thread::sleep_for(std::chrono::milliseconds(backoff(rng)));
    }
    s.latency = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    s.outcome = receipt ? std::string(outcome_name(receipt->outcome)) : "error";
    if (receipt && receipt->outcome != Outcome::Reverted) s.revert_reason.clear();
    if (profile.verify_receipts && receipt && receipt->outcome == Outcome::Accepted) {
      std::string why;
      if (!verify_receipt(*receipt, inv, &why) || receipt->confirmations.size() != inv.cell_addresses.size()) ++invalid;
    }
  };

  auto begin = std::chrono::steady_clock::now();
  if (profile.mode == LoadProfile::Mode::Sequential) {
    std::mt19937_64 rng(std::random_device{}());
    for (std::size_t i = 0; i < profile.n_tx; ++i) one(i, rng);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < std::max<std::size_t>(profile.concurrency, 1); ++w)
      workers.emplace_back([&] {
        std::mt19937_64 rng(std::random_device{}());
        for (auto i = next++; i < profile.n_tx; i = next++) one(i, rng);
      });
    for (auto& t : workers) t.join();
  }
  stats.elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - begin).count();

  std::vector<double> lat;
  for (const auto& s : stats.samples) {
    lat.push_back(s.latency);
    if (s.outcome == "accepted")
      ++stats.accepted;
    else
      ++stats.failures;
  }
  stats.p50 = percentile(lat, 0.5);
  stats.p90 = percentile(lat, 0.9);
  stats.p99 = percentile(lat, 0.99);
  stats.throughput = stats.elapsed > 0 ? static_cast<double>(stats.accepted) / stats.elapsed : 0;
  stats.invalid_receipts = invalid;
  return stats;
}

}  // namespace blcm
