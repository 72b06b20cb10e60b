#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace blcm;
using namespace blcm::testing;

TEST(Harness, Percentile) {
  EXPECT_EQ(percentile({}, 0.5), 0);
  EXPECT_EQ(percentile({3}, 0.99), 3);
  std::vector<double> v;
  for (int i = 100; i >= 1; --i) v.push_back(i);
  EXPECT_EQ(percentile(v, 0.5), 50);
  EXPECT_EQ(percentile(v, 0.9), 90);
  EXPECT_EQ(percentile(v, 0.99), 99);
  EXPECT_EQ(percentile(v, 1.0), 100);
  EXPECT_EQ(percentile(v, 0.0), 1);
}

TEST(Harness, SpawnDefaults) {
  auto clock = std::make_shared<ManualClock>(kStart);
  ConsortiumOptions o;
  o.size = 4;
  o.lambda = 30;
  o.clock = clock;
  auto c = Consortium::spawn(o);
  EXPECT_EQ(c->size(), 4u);
  EXPECT_EQ(c->config().invariants.t0 % 30, 0);
  EXPECT_GT(c->config().invariants.t0, kStart);
  EXPECT_LE(c->config().invariants.t0, kStart + 30);
  EXPECT_EQ(c->manual_clock(), clock.get());
  EXPECT_TRUE(c->cell_url(0).empty());
  o.size = 1;
  EXPECT_THROW(Consortium::spawn(o), Error);
}

TEST(Harness, DataDirectoryHoldsTheDeployment) {
  auto dir = std::filesystem::temp_directory_path() / ("harness-" + random_nonce().hex());
  ConsortiumOptions o;
  o.data_dir = dir;
  auto d = deploy(2, 2, 50, o);
  d.net->submit(0, make_transfer(d.clients[0], d.clients[1].address, 5, d.now()));
  d.stage(0);
  auto cfg = DeploymentConfig::load(dir / "deployment.conf");
  EXPECT_EQ(cfg.invariants.cell_addresses, d.inv().cell_addresses);
  EXPECT_EQ(cfg.allocation, d.net->config().allocation);
  std::string key;
  std::ifstream(dir / "cell-1.key") >> key;
  EXPECT_EQ(KeyPair::from_hex(key).address, d.net->cell(1).address());
  EXPECT_EQ(Ledger::read_file(dir / "cell-0.ledger").size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / "anchor.log"));
  d.net->stop();
  std::filesystem::remove_all(dir);
}

TEST(Harness, ReplayReproducesArchives) {
  ConsortiumOptions o;
  o.retention = 10;
  auto d = deploy(2, 3, 100, o);
  std::vector<Snapshot> headers;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (int i = 0; i < 4; ++i)
      d.net->submit(i % 2, make_transfer(d.clients[i % 3], d.clients[(i + 1) % 3].address, 2, d.now()));
    auto put = d.net->submit(0, make_cas_put(d.clients[0], "b" + std::to_string(c), d.now()));
    d.net->settle();
    d.net->submit(1, make_cas_ref(d.clients[0], "release", Digest::from_hex(put.result.at("hash").get<std::string>()), d.now()));
    d.stage(c);
    headers.push_back(d.net->cell(1).archive(c)->snapshot);
  }
  auto ledger = d.net->cell(1).ledger_slice(1, d.net->cell(1).ledger().last_seq());
  auto replayed = replay_archives(d.net->config(), d.net->cell(1).address(), ledger, headers);
  ASSERT_EQ(replayed.size(), 3u);
  for (std::int64_t c = 0; c < 3; ++c) EXPECT_EQ(replayed[c].encode(), d.net->cell(1).archive(c)->encode());
}

TEST(Harness, SequentialLoad) {
  auto d = deploy(2, 5, 100);
  LoadProfile p;
  p.n_tx = 30;
  auto stats = run_load(p, 2, d.clients, [&](std::size_t i, const Envelope& tx) { return d.net->submit(i, tx); },
                        *d.clock, d.inv());
  EXPECT_EQ(stats.accepted, 30u);
  EXPECT_EQ(stats.failures, 0u);
  EXPECT_EQ(stats.invalid_receipts, 0u);
  EXPECT_LE(stats.p50, stats.p90);
  EXPECT_LE(stats.p90, stats.p99);
  auto s = stats.summary();
  EXPECT_EQ(s.at("transactions").get<int>(), 30);
  auto csv = std::filesystem::temp_directory_path() / ("load-" + random_nonce().hex() + ".csv");
  stats.write_csv(csv);
  std::ifstream in(csv);
  std::string line;
  int lines = 0;
  while (std::getline(in, line)) ++lines;
  EXPECT_EQ(lines, 31);
  std::filesystem::remove(csv);
  ASSERT_TRUE(d.net->settle());
  std::uint64_t total = 0;
  for (const auto& [k, v] : d.net->cell(1).runtime().store_copy(d.fm())) total += std::stoull(v);
  EXPECT_EQ(total, 500u);
}

TEST(Harness, SimultaneousCasLoad) {
  auto d = deploy(3, 4, 100);
  LoadProfile p;
  p.n_tx = 40;
  p.contract = "cas";
  p.mode = LoadProfile::Mode::Simultaneous;
  p.concurrency = 8;
  p.retries = 20;
  auto stats = run_load(p, 3, d.clients, [&](std::size_t i, const Envelope& tx) { return d.net->submit(i, tx); },
                        *d.clock, d.inv());
  EXPECT_EQ(stats.accepted, 40u);
  EXPECT_EQ(stats.invalid_receipts, 0u);
  ASSERT_TRUE(d.net->settle());
  auto fp = d.net->cell(0).runtime().fingerprint(system_contracts::cas_id());
  for (std::size_t i = 1; i < 3; ++i) EXPECT_EQ(d.net->cell(i).runtime().fingerprint(system_contracts::cas_id()), fp);
}

TEST(Harness, LoadRejectsBadProfiles) {
  auto clock = ManualClock(kStart);
  DeploymentInvariants inv;
  LoadProfile p;
  p.contract = "nope";
  auto never = [](std::size_t, const Envelope&) -> Receipt { throw Error(ErrorCode::Unreachable, "unused"); };
  EXPECT_THROW(run_load(p, 2, make_clients(1), never, clock, inv), Error);
  p.contract = "fastmoney";
  EXPECT_THROW(run_load(p, 0, make_clients(1), never, clock, inv), Error);
  EXPECT_THROW(run_load(p, 2, {}, never, clock, inv), Error);
}
