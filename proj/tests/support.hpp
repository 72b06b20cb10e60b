#pragma once

#include <memory>

#include "blcm/harness.hpp"

namespace blcm::testing {

inline constexpr Timestamp kStart = 1700000000;

struct Deployment {
  std::shared_ptr<ManualClock> clock;
  std::vector<KeyPair> clients;
  std::unique_ptr<Consortium> net;

  Timestamp now() const { return clock->now(); }
  const DeploymentInvariants& inv() const { return net->config().invariants; }
  Address fm() const { return system_contracts::genesis_fastmoney_id(); }

  std::uint64_t balance(std::size_t cell, const Address& who) const {
    net->settle();
    return fastmoney::balance_of(net->cell(cell).runtime().store_copy(fm()), who);
  }

  /// Moves the clock to the deadline of `cycle` and runs every cell's stage.
  void stage(std::int64_t cycle) {
    net->settle();
    clock->set(deadline_of_cycle(cycle, inv()));
    net->run_stage(cycle);
  }
};

inline Deployment deploy(std::size_t cells, std::size_t clients = 4, std::uint64_t funds = 1000,
                         ConsortiumOptions options = {}) {
  Deployment d;
  d.clock = std::make_shared<ManualClock>(kStart);
  d.clients = make_clients(clients);
  options.size = cells;
  options.clock = d.clock;
  if (options.allocation.empty()) options.allocation = allocation_for(d.clients, funds);
  if (options.delta == std::chrono::milliseconds(2000)) options.delta = std::chrono::milliseconds(500);
  options.cell_options.async_reports = false;
  options.cell_options.local_wait = std::chrono::seconds(10);
  d.net = Consortium::spawn(options);
  return d;
}

}  // namespace blcm::testing
