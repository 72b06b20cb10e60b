#include <gtest/gtest.h>

#include <random>

#include "blcm/cost_model.hpp"

using namespace blcm;
using namespace blcm::cost;

namespace {

CostParams uniform(std::uint64_t n, std::uint64_t m, double size) {
  CostParams p;
  p.n_tx = n;
  p.n_cells = m;
  p.sizes.client_header = size;
  p.sizes.client_payload = size;
  p.sizes.cell_header.assign(m, size);
  p.sizes.cell_payload.assign(m, size);
  return p;
}

}  // namespace

TEST(Fees, TableThreeGasColumn) {
  EXPECT_EQ(estimate_fees(10 * 60).gas_per_day, 7083792u);
  EXPECT_EQ(estimate_fees(30 * 60).gas_per_day, 2361264u);
  EXPECT_EQ(estimate_fees(60 * 60).gas_per_day, 1180632u);
  EXPECT_EQ(estimate_fees(8 * 3600).gas_per_day, 147579u);
  EXPECT_EQ(estimate_fees(24 * 3600).gas_per_day, 49193u);
}

TEST(Fees, CurrencyIsGasTimesPrices) {
  auto f = estimate_fees(86400, 49193, 22e-9, 733);
  EXPECT_NEAR(f.currency_per_day, 49193 * 22e-9 * 733, 1e-9);
  EXPECT_THROW(estimate_fees(0), Error);
  EXPECT_THROW(estimate_fees(-5), Error);
  // Periods longer than a day report less than once a day.
  EXPECT_EQ(estimate_fees(2 * 86400).gas_per_day, 0u);
}

TEST(Delay, Examples) {
  CostParams p;
  p.n_cells = 2;
  p.per_cell_delays = {{1, 1}};
  EXPECT_EQ(estimate_delay(p), 0);
  p.n_tx = 1;
  p.d1 = p.dc = 1;
  EXPECT_DOUBLE_EQ(estimate_delay(p), 4);
  p.per_cell_delays = {{0.2, 0.3}, {1.5, 0.25}, {0.1, 0.1}};
  auto single = estimate_delay(p);
  EXPECT_DOUBLE_EQ(single, 1 + 1.75 + 1);
  p.n_tx = 100;
  EXPECT_DOUBLE_EQ(estimate_delay(p), 100 * single);
  p.per_cell_delays.clear();
  EXPECT_THROW(estimate_delay(p), Error);
}

TEST(Comm, HandEvaluatedAtTwoCells) {
  // 2 + 1*(1+1+1) + (1+1) + 2*(1+1) = 11 per transaction.
  EXPECT_DOUBLE_EQ(estimate_comm(uniform(1, 2, 1)), 11);
  EXPECT_DOUBLE_EQ(estimate_comm(uniform(7, 2, 1)), 77);
  EXPECT_DOUBLE_EQ(estimate_comm(uniform(0, 2, 1)), 0);
  auto p = uniform(1, 3, 1);
  p.sizes.cell_header.resize(2);
  EXPECT_THROW(estimate_comm(p), Error);
}

TEST(Comm, DistinctSizes) {
  CostParams p;
  p.n_tx = 1;
  p.n_cells = 3;
  p.sizes.client_header = 10;
  p.sizes.client_payload = 20;
  p.sizes.cell_header = {1, 2, 3};
  p.sizes.cell_payload = {100, 200, 300};
  // 30 + 2*(1+30) + (202+303) + (101+202+303)
  EXPECT_DOUBLE_EQ(estimate_comm(p), 30 + 62 + 505 + 606);
}

TEST(Storage, Examples) {
  CostParams p;
  p.n_cells = 2;
  p.footprint = 100;
  EXPECT_EQ(estimate_storage(p), 0);
  p.n_tx = 1;
  EXPECT_DOUBLE_EQ(estimate_storage(p), 600);
}

TEST(Compute, Examples) {
  CostParams p;
  p.n_users = 0;
  p.n_cells = 1;
  p.n_tx = 1;
  p.compute_per_tx = 1;
  EXPECT_DOUBLE_EQ(estimate_compute(p), 1);
  p.n_users = 10;
  p.n_cells = 2;
  p.n_tx = 5;
  EXPECT_DOUBLE_EQ(estimate_compute(p), 60);
}

TEST(CostProperty, LinearInTransactions) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(0, 50);
  for (int trial = 0; trial < 500; ++trial) {
    auto m = 2 + rng() % 9;
    auto p = uniform(1 + rng() % 1000, m, 0);
    p.sizes.client_header = u(rng);
    p.sizes.client_payload = u(rng);
    for (auto& h : p.sizes.cell_header) h = u(rng);
    for (auto& x : p.sizes.cell_payload) x = u(rng);
    p.d1 = u(rng);
    p.dc = u(rng);
    for (std::uint64_t i = 0; i < m; ++i) p.per_cell_delays.push_back({u(rng), u(rng)});
    p.footprint = u(rng);
    p.compute_per_tx = u(rng);
    p.n_users = rng() % 100;
    auto q = p;
    q.n_tx = 2 * p.n_tx;
    ASSERT_NEAR(estimate_delay(q), 2 * estimate_delay(p), 1e-6 * estimate_delay(q) + 1e-9);
    ASSERT_NEAR(estimate_comm(q), 2 * estimate_comm(p), 1e-6 * estimate_comm(q) + 1e-9);
    ASSERT_NEAR(estimate_storage(q), 2 * estimate_storage(p), 1e-6 * estimate_storage(q) + 1e-9);
    ASSERT_NEAR(estimate_compute(q), 2 * estimate_compute(p), 1e-6 * estimate_compute(q) + 1e-9);
    // Compute is linear in K for fixed N and M: f(K) = (K + M) * N * C.
    auto k1 = p, k2 = p;
    k1.n_users = 0;
    k2.n_users = 1;
    ASSERT_NEAR(estimate_compute(k2) - estimate_compute(k1), static_cast<double>(p.n_tx) * p.compute_per_tx,
                1e-6 * estimate_compute(k2) + 1e-9);
    // Fees do not depend on N or K.
    ASSERT_EQ(estimate_all(p).l_fee_gas_per_day, estimate_all(q).l_fee_gas_per_day);
  }
}
