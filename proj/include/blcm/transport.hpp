#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <shared_mutex>
#include <vector>

#include "blcm/ledger.hpp"

namespace blcm {

class Cell;

/// Cell-to-cell channel. Failures surface as blcm::Error; a peer that cannot
/// be reached raises Unreachable.
class PeerTransport {
 public:
  virtual ~PeerTransport() = default;
  /// Delivers a TX_FORWARD and returns the peer's TX_CONFIRM.
  virtual Envelope forward(const Address& peer, const Envelope& fwd) = 0;
  virtual void decide(const Address& peer, const Envelope& decision) = 0;
  virtual std::vector<LedgerEntry> contract_history(const Address& peer, const Address& contract,
                                                    std::uint64_t after_version) = 0;
};

/// In-process network: calls go straight to the peer object, optionally
/// after an emulated one-way link delay.
class LocalNetwork final : public PeerTransport {
 public:
  explicit LocalNetwork(std::chrono::microseconds link_delay = {}) : link_delay_us_(link_delay.count()) {}

  void attach(const std::shared_ptr<Cell>& cell);
  void detach(const Address& cell);
  void set_link_delay(std::chrono::microseconds d) { link_delay_us_ = d.count(); }

  Envelope forward(const Address& peer, const Envelope& fwd) override;
  void decide(const Address& peer, const Envelope& decision) override;
  std::vector<LedgerEntry> contract_history(const Address& peer, const Address& contract,
                                            std::uint64_t after_version) override;

 private:
  std::shared_ptr<Cell> lookup(const Address& peer) const;
  void hop() const;

  mutable std::shared_mutex mutex_;
  std::map<Address, std::weak_ptr<Cell>> cells_;
  std::atomic<std::int64_t> link_delay_us_;
};

}  // namespace blcm
