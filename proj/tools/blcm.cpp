#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>

#include "blcm/auditor.hpp"
#include "blcm/cost_model.hpp"
#include "blcm/harness.hpp"
#include "blcm/http.hpp"

using namespace blcm;

namespace {

std::atomic<bool> g_stop{false};

void wait_for_signal() {
  std::signal(SIGINT, [](int) { g_stop = true; });
  std::signal(SIGTERM, [](int) { g_stop = true; });
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(200));
}

KeyPair load_key(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Config, "cannot read key file " + path);
  std::string hex;
  in >> hex;
  return KeyPair::from_hex(hex);
}

std::string cell_url_for(const DeploymentConfig& cfg, const std::string& cell) {
  if (cell.starts_with("http")) return cell;
  std::size_t idx = 0;
  try {
    idx = std::stoul(cell);
  } catch (const std::exception&) {
    auto it = cfg.cell_urls.find(Address::parse(cell));
    if (it == cfg.cell_urls.end()) throw Error(ErrorCode::Config, "no URL for cell " + cell);
    return it->second;
  }
  if (idx >= cfg.invariants.cell_addresses.size()) throw Error(ErrorCode::Config, "cell index out of range");
  return cfg.cell_urls.at(cfg.invariants.cell_addresses[idx]);
}

void print_receipt(const Receipt& r) {
  std::cout << canonical_dump(Json{{"outcome", outcome_name(r.outcome)},
                                   {"revert_reason", r.revert_reason},
                                   {"result", r.result},
                                   {"error", r.error ? Json(error_name(*r.error)) : Json()},
                                   {"confirmations", r.confirmations.size()}})
            << "\n";
}

void print_fee_table(std::ostream& out, double gas_price, double token_price) {
  out << "period_s,gas_per_day,currency_per_day\n";
  for (std::int64_t period : {600, 1800, 3600, 28800, 86400}) {
    auto f = cost::estimate_fees(period, cost::kDefaultGasPerReport, gas_price, token_price);
    out << period << ',' << f.gas_per_day << ',' << f.currency_per_day << '\n';
  }
}

cost::CostParams params_from_json(const Json& j) {
  cost::CostParams p;
  p.n_tx = j.value("n_tx", p.n_tx);
  p.n_cells = j.value("n_cells", p.n_cells);
  p.n_users = j.value("n_users", p.n_users);
  p.d1 = j.value("d1", 0.0);
  p.dc = j.value("dc", 0.0);
  for (const auto& d : j.value("per_cell_delays", Json::array()))
    p.per_cell_delays.push_back({d.at(0).get<double>(), d.at(1).get<double>()});
  p.sizes.client_header = j.value("client_header", 0.0);
  p.sizes.client_payload = j.value("client_payload", 0.0);
  p.sizes.cell_header = j.value("cell_header", std::vector<double>{});
  p.sizes.cell_payload = j.value("cell_payload", std::vector<double>{});
  p.footprint = j.value("footprint", 0.0);
  p.compute_per_tx = j.value("compute_per_tx", 0.0);
  p.gas_per_report = j.value("gas_per_report", cost::kDefaultGasPerReport);
  p.lambda = j.value("lambda", p.lambda);
  p.gas_price = j.value("gas_price", 0.0);
  p.token_price = j.value("token_price", 0.0);
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"blcm: consortium cells, anchor, auditor and client tools"};
  app.require_subcommand(1);

  // keygen
  auto* keygen = app.add_subcommand("keygen", "Generate a key pair");
  std::string key_out;
  keygen->add_option("--out", key_out, "Write the private key to this file");

  // spawn
  auto* spawn = app.add_subcommand("spawn", "Run a local consortium and anchor over HTTP until interrupted");
  ConsortiumOptions sp;
  std::string spawn_dir = "blcm-deployment";
  std::size_t fund_clients = 0;
  std::uint64_t fund_amount = 1000000;
  std::int64_t delta_ms = 2000;
  spawn->add_option("--size", sp.size, "Number of cells")->check(CLI::Range(2, 10));
  spawn->add_option("--lambda", sp.lambda, "Report period in seconds");
  spawn->add_option("--delta-ms", delta_ms, "Forwarding deadline");
  spawn->add_option("--miss-threshold", sp.miss_threshold);
  spawn->add_option("--retention", sp.retention, "Snapshots each cell keeps");
  spawn->add_option("--dir", spawn_dir, "Deployment directory");
  spawn->add_option("--base-port", sp.base_port, "First port; defaults to $BLCM_BASE_PORT or free ports")
      ->envname("BLCM_BASE_PORT");
  spawn->add_option("--faucet", fund_amount, "Coins allocated to the faucet key written to the directory");
  spawn->add_option("--fund-clients", fund_clients, "Also allocate coins to this many client keys");

  // cell / anchor as separate processes
  auto* cellcmd = app.add_subcommand("cell", "Run one cell");
  std::string deployment, key_file, ledger_file;
  cellcmd->add_option("--deployment", deployment)->required();
  cellcmd->add_option("--key", key_file)->required();
  cellcmd->add_option("--ledger", ledger_file, "Ledger file replayed on start");

  auto* anchorcmd = app.add_subcommand("anchor", "Run the anchor");
  std::string anchor_log;
  anchorcmd->add_option("--deployment", deployment)->required();
  anchorcmd->add_option("--log", anchor_log, "Append-only record log");

  // load
  auto* load = app.add_subcommand("load", "Generate load against a running deployment");
  LoadProfile lp;
  std::string mode = "sequential", csv_out, faucet_file;
  load->add_option("--deployment", deployment)->required();
  load->add_option("--clients", lp.n_clients);
  load->add_option("--tx", lp.n_tx);
  load->add_option("--mode", mode)->check(CLI::IsMember({"sequential", "simultaneous"}));
  load->add_option("--contract", lp.contract)->check(CLI::IsMember({"fastmoney", "cas"}));
  load->add_option("--concurrency", lp.concurrency);
  load->add_option("--faucet", faucet_file, "Key with coins used to fund fresh clients");
  load->add_option("--csv", csv_out, "Per-transaction CSV output");

  // fault
  auto* fault = app.add_subcommand("fault", "Inject a fault into a running cell");
  std::string fault_cell, behavior, target;
  std::int64_t fault_delay = 0, fault_duration = 0;
  fault->add_option("--deployment", deployment);
  fault->add_option("--cell", fault_cell, "Cell index, address or URL")->required();
  fault->add_option("--behavior", behavior)->required();
  fault->add_option("--delay-ms", fault_delay);
  fault->add_option("--duration-ms", fault_duration, "0 keeps the fault until cleared");
  fault->add_option("--target", target, "Censor only this sender");

  // audit
  auto* audit = app.add_subcommand("audit", "Audit a deployment from public data");
  std::string anchor_url;
  std::vector<std::string> cell_urls;
  std::int64_t audit_cycle = -1;
  bool continuous = false;
  audit->add_option("--deployment", deployment)->required();
  audit->add_option("--anchor", anchor_url);
  audit->add_option("--cells", cell_urls, "Cell URLs in consortium order");
  audit->add_option("--cycle", audit_cycle, "Audit through this cycle");
  audit->add_flag("--continuous", continuous, "Keep auditing each new cycle");

  // cost
  auto* costcmd = app.add_subcommand("cost", "Evaluate the cost model");
  std::string params_file;
  std::vector<std::int64_t> periods;
  double gas_price = 0, token_price = 0;
  costcmd->add_option("--params", params_file, "JSON parameter file; \"sweep_n_tx\" lists N values");
  costcmd->add_option("--period", periods, "Report periods in seconds");
  costcmd->add_option("--gas-price", gas_price, "Tokens per gas unit");
  costcmd->add_option("--token-price", token_price, "Currency per token");

  // client
  auto* client = app.add_subcommand("client", "Client commands");
  client->require_subcommand(1);
  std::string client_cell = "0";
  client->add_option("--deployment", deployment)->required();
  client->add_option("--key", key_file);
  client->add_option("--cell", client_cell, "Service cell: index, address or URL");
  auto* transfer = client->add_subcommand("transfer", "Send FastMoney coins");
  std::string to, contract_arg;
  std::uint64_t amount = 0;
  transfer->add_option("--to", to)->required();
  transfer->add_option("--amount", amount)->required();
  transfer->add_option("--contract", contract_arg, "FastMoney instance; defaults to the genesis one");
  auto* balance = client->add_subcommand("balance", "Read a FastMoney balance from every cell");
  std::string account;
  balance->add_option("--account", account)->required();
  balance->add_option("--contract", contract_arg);
  auto* casput = client->add_subcommand("cas-put", "Upload a blob");
  std::string data, file;
  casput->add_option("--data", data);
  casput->add_option("--file", file);
  auto* casget = client->add_subcommand("cas-get", "Download a blob");
  std::string hash;
  casget->add_option("--hash", hash)->required();
  auto* casref = client->add_subcommand("cas-ref", "Add or release a CAS reference");
  std::string ref_op;
  casref->add_option("--hash", hash)->required();
  casref->add_option("--op", ref_op)->required()->check(CLI::IsMember({"addref", "release"}));
  auto* deploy = client->add_subcommand("deploy", "Deploy a FastMoney instance");
  std::string salt;
  bool destroyable = false;
  deploy->add_option("--salt", salt)->required();
  deploy->add_flag("--destroyable", destroyable);
  auto* escape = client->add_subcommand("escape", "Submit a transfer to the anchor's contingency queue");
  escape->add_option("--to", to)->required();
  escape->add_option("--amount", amount)->required();

  CLI11_PARSE(app, argc, argv);

  try {
    SystemClock clock;
    if (*keygen) {
      auto k = KeyPair::generate();
      if (!key_out.empty()) std::ofstream(key_out) << to_hex(k.private_key) << '\n';
      std::cout << "address " << k.address.str() << "\nprivate " << to_hex(k.private_key) << "\n";
      return 0;
    }

    if (*spawn) {
      sp.http = true;
      sp.schedule = true;
      sp.delta = std::chrono::milliseconds(delta_ms);
      sp.data_dir = spawn_dir;
      std::filesystem::create_directories(spawn_dir);
      auto faucet = KeyPair::generate();
      std::ofstream(std::filesystem::path(spawn_dir) / "faucet.key") << to_hex(faucet.private_key) << '\n';
      sp.allocation.emplace_back(faucet.address, fund_amount);
      auto clients = make_clients(fund_clients);
      for (std::size_t i = 0; i < clients.size(); ++i) {
        std::ofstream(std::filesystem::path(spawn_dir) / ("client-" + std::to_string(i) + ".key"))
            << to_hex(clients[i].private_key) << '\n';
        sp.allocation.emplace_back(clients[i].address, fund_amount);
      }
      auto c = Consortium::spawn(sp);
      std::cout << "anchor " << c->anchor_url() << "\n";
      for (std::size_t i = 0; i < c->size(); ++i)
        std::cout << "cell " << i << " " << c->cell(i).address().str() << " " << c->cell_url(i) << "\n";
      std::cout << "deployment file " << (std::filesystem::path(spawn_dir) / "deployment.conf").string() << "\n";
      std::cout.flush();
      wait_for_signal();
      c->stop();
      return 0;
    }

    if (*cellcmd) {
      auto cfg = DeploymentConfig::load(deployment);
      auto key = load_key(key_file);
      HttpPeerTransport net(cfg.cell_urls, cfg.invariants.delta + std::chrono::seconds(1));
      HttpAnchorClient anchor(cfg.anchor_url);
      CellOptions opts;
      if (!ledger_file.empty()) opts.ledger_path = ledger_file;
      auto cell = std::make_shared<Cell>(cfg, key, clock, net, anchor, opts);
      auto it = cfg.cell_urls.find(key.address);
      if (it == cfg.cell_urls.end()) throw Error(ErrorCode::Config, "no URL for this cell in the deployment file");
      auto [host, port] = parse_url(it->second);
      CellServer server(cell, host, port);
      cell->start();
      std::cout << "cell " << key.address.str() << " listening on " << it->second << "\n";
      std::cout.flush();
      wait_for_signal();
      cell->stop();
      return 0;
    }

    if (*anchorcmd) {
      auto cfg = DeploymentConfig::load(deployment);
      std::optional<std::filesystem::path> log;
      if (!anchor_log.empty()) log = anchor_log;
      auto anchor = std::make_shared<Anchor>(cfg.invariants.cell_addresses, clock, log);
      auto [host, port] = parse_url(cfg.anchor_url);
      AnchorServer server(anchor, host, port);
      std::cout << "anchor listening on " << cfg.anchor_url << "\n";
      std::cout.flush();
      wait_for_signal();
      return 0;
    }

    if (*load) {
      auto cfg = DeploymentConfig::load(deployment);
      lp.mode = mode == "simultaneous" ? LoadProfile::Mode::Simultaneous : LoadProfile::Mode::Sequential;
      std::vector<std::string> urls;
      for (const auto& a : cfg.invariants.cell_addresses) urls.push_back(cfg.cell_urls.at(a));
      Submitter submit = [&](std::size_t cell, const Envelope& tx) { return CellClient(urls.at(cell)).commit(tx); };
      std::vector<KeyPair> clients;
      if (lp.contract == "fastmoney") {
        if (faucet_file.empty()) throw Error(ErrorCode::InvalidArgument, "--faucet is required for fastmoney load");
        auto faucet = load_key(faucet_file);
        clients = make_clients(lp.n_clients);
        std::cerr << "funding " << clients.size() << " clients\n";
        for (const auto& c : clients) {
          auto r = submit(0, make_transfer(faucet, c.address, 1000, clock.now()));
          if (r.outcome != Outcome::Accepted) throw Error(ErrorCode::TransactionReverted, "funding failed");
        }
      }
      auto stats = run_load(lp, urls.size(), clients, submit, clock, cfg.invariants);
      if (!csv_out.empty()) stats.write_csv(csv_out);
      std::cout << canonical_dump(stats.summary()) << "\n";
      return stats.failures == 0 && stats.invalid_receipts == 0 ? 0 : 1;
    }

    if (*fault) {
      std::string url = fault_cell;
      if (!fault_cell.starts_with("http")) url = cell_url_for(DeploymentConfig::load(deployment), fault_cell);
      Json j{{"behavior", std::string(fault_name(parse_fault(behavior)))},
             {"delay_ms", fault_delay},
             {"duration_ms", fault_duration}};
      if (!target.empty()) j["target"] = Address::parse(target).str();
      CellClient(url).inject_fault(j);
      std::cout << "ok\n";
      return 0;
    }

    if (*audit) {
      auto cfg = DeploymentConfig::load(deployment);
      HttpAnchorClient anchor(anchor_url.empty() ? cfg.anchor_url : anchor_url);
      Auditor auditor(cfg, anchor);
      const auto& cells = cfg.invariants.cell_addresses;
      if (!cell_urls.empty() && cell_urls.size() != cells.size())
        throw Error(ErrorCode::Config, "--cells must list one URL per consortium cell");
      for (std::size_t i = 0; i < cells.size(); ++i)
        auditor.add_source(http_audit_source(cells[i], cell_urls.empty() ? cfg.cell_urls.at(cells[i]) : cell_urls[i]));
      auto run_through = [&](std::int64_t last) {
        for (const auto& v : auditor.audit_through(last)) std::cout << canonical_dump(v.to_json()) << "\n";
        std::cout << canonical_dump(Json{{"deployment_valid", auditor.deployment_valid()},
                                         {"through_cycle", last}})
                  << "\n";
        std::cout.flush();
      };
      // A cycle can be audited once its report window has closed.
      auto closed = [&] { return (clock.now() - cfg.invariants.t0) / cfg.invariants.lambda - 2; };
      if (!continuous) {
        auto last = audit_cycle >= 0 ? audit_cycle : closed();
        if (last < 0) throw Error(ErrorCode::BeforeGenesis, "no cycle has closed yet");
        run_through(last);
        return auditor.deployment_valid() ? 0 : 1;
      }
      std::signal(SIGINT, [](int) { g_stop = true; });
      while (!g_stop) {
        auto last = closed();
        if (last >= 0 && (!auditor.last_audited() || *auditor.last_audited() < last)) run_through(last);
        std::this_thread::sleep_for(std::chrono::seconds(1));
      }
      return 0;
    }

    if (*costcmd) {
      if (params_file.empty()) {
        if (periods.empty()) {
          print_fee_table(std::cout, gas_price, token_price);
        } else {
          std::cout << "period_s,gas_per_day,currency_per_day\n";
          for (auto p : periods) {
            auto f = cost::estimate_fees(p, cost::kDefaultGasPerReport, gas_price, token_price);
            std::cout << p << ',' << f.gas_per_day << ',' << f.currency_per_day << '\n';
          }
        }
        return 0;
      }
      std::ifstream in(params_file);
      if (!in) throw Error(ErrorCode::Config, "cannot read " + params_file);
      auto j = Json::parse(in);
      auto base = params_from_json(j);
      std::vector<std::uint64_t> sweep = j.value("sweep_n_tx", std::vector<std::uint64_t>{base.n_tx});
      std::cout << "n_tx,l_delay_s,l_data_bytes,l_storage_bytes,l_compute_units,fee_gas_per_day,fee_currency_per_day\n";
      for (auto n : sweep) {
        auto p = base;
        p.n_tx = n;
        auto r = cost::estimate_all(p);
        std::cout << n << ',' << r.l_delay << ',' << r.l_data << ',' << r.l_storage << ',' << r.l_compute << ','
                  << r.l_fee_gas_per_day << ',' << r.l_fee_currency_per_day << '\n';
      }
      return 0;
    }

    if (*client) {
      auto cfg = DeploymentConfig::load(deployment);
      auto fm = contract_arg.empty() ? system_contracts::genesis_fastmoney_id() : Address::parse(contract_arg);
      if (*balance) {
        auto who = Address::parse(account);
        for (const auto& a : cfg.invariants.cell_addresses) {
          auto raw = CellClient(cfg.cell_urls.at(a)).read(fm, fastmoney::balance_key(who));
          Store s;
          if (raw) s[fastmoney::balance_key(who)] = *raw;
          std::cout << a.str() << " " << fastmoney::balance_of(s, who) << "\n";
        }
        return 0;
      }
      CellClient cell(cell_url_for(cfg, client_cell));
      if (*casget) {
        std::cout << cell.cas_get(Digest::from_hex(hash));
        return 0;
      }
      if (key_file.empty()) throw Error(ErrorCode::InvalidArgument, "--key is required");
      auto key = load_key(key_file);
      if (*escape) {
        auto tx = make_transfer(key, Address::parse(to), amount, clock.now());
        auto pos = HttpAnchorClient(cfg.anchor_url).submit_contingency(tx);
        std::cout << canonical_dump(Json{{"position", pos}, {"nonce", tx.payload.nonce.hex()}}) << "\n";
        return 0;
      }
      Envelope tx;
      if (*transfer) {
        tx = make_transfer(key, Address::parse(to), amount, clock.now(), fm);
      } else if (*casput) {
        std::string blob = data;
        if (!file.empty()) {
          std::ifstream in(file, std::ios::binary);
          blob.assign(std::istreambuf_iterator<char>(in), {});
        }
        tx = make_cas_put(key, blob, clock.now());
      } else if (*casref) {
        tx = make_cas_ref(key, ref_op, Digest::from_hex(hash), clock.now());
      } else if (*deploy) {
        tx = make_deploy(key, "fastmoney", salt, destroyable, {}, clock.now());
      }
      auto r = cell.commit(tx);
      print_receipt(r);
      return r.outcome == Outcome::Reverted ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
