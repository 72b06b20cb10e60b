#include "blcm/transport.hpp"

#include <mutex>
#include <thread>

#include "blcm/cell.hpp"

namespace blcm {

void LocalNetwork::attach(const std::shared_ptr<Cell>& cell) {
  std::unique_lock lock(mutex_);
  cells_[cell->address()] = cell;
}

void LocalNetwork::detach(const Address& cell) {
  std::unique_lock lock(mutex_);
  cells_.erase(cell);
}

std::shared_ptr<Cell> LocalNetwork::lookup(const Address& peer) const {
  std::shared_lock lock(mutex_);
  auto it = cells_.find(peer);
  if (it == cells_.end()) throw Error(ErrorCode::Unreachable, "no route to " + peer.str());
  auto cell = it->second.lock();
  if (!cell) throw Error(ErrorCode::Unreachable, peer.str() + " is gone");
  return cell;
}

void LocalNetwork::hop() const {
  auto us = link_delay_us_.load();
  if (us > 0) std::this_thread::sleep_for(std::chrono::microseconds(us));
}

Envelope LocalNetwork::forward(const Address& peer, const Envelope& fwd) {
  auto cell = lookup(peer);
  hop();
  auto conf = cell->handle_forward(fwd);
  hop();
  return conf;
}

void LocalNetwork::decide(const Address& peer, const Envelope& decision) {
  auto cell = lookup(peer);
  hop();
  cell->handle_decide(decision);
}

std::vector<LedgerEntry> LocalNetwork::contract_history(const Address& peer, const Address& contract,
                                                        std::uint64_t after_version) {
  auto cell = lookup(peer);
  hop();
  auto out = cell->contract_history(contract, after_version);
  hop();
  return out;
}

}  // namespace blcm
