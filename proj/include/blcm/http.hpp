#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <thread>

#include "blcm/anchor.hpp"
#include "blcm/cell.hpp"
#include "blcm/transport.hpp"

namespace blcm {

/// Serves one cell over HTTP.
///
///   POST /tx        client transaction envelope -> receipt
///   POST /fwd       TX_FORWARD -> TX_CONFIRM
///   POST /decide    TX_DECIDE
///   POST /fault     {"behavior", "delay_ms", "target", "duration_ms"}
///   GET  /fingerprint?cycle=i   signed snapshot header
///   GET  /snapshot?cycle=i      archive
///   GET  /status                signed status
///   GET  /ledger?from=a&to=b  or  ?contract=c&after_version=v
///   GET  /state?contract=c&key=k
///   GET  /cas?hash=h
///
/// Errors come back as 4xx/5xx with {"error": name, "message": text}.
class CellServer {
 public:
  CellServer(std::shared_ptr<Cell> cell, std::string host, int port);
  ~CellServer();
  CellServer(const CellServer&) = delete;
  CellServer& operator=(const CellServer&) = delete;

  int port() const { return port_; }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Serves the anchor: POST /report, GET /report?cell&cycle, POST /contingency,
/// GET /contingency?since=n, GET /reports, GET /fees.
class AnchorServer {
 public:
  AnchorServer(std::shared_ptr<Anchor> anchor, std::string host, int port);
  ~AnchorServer();
  AnchorServer(const AnchorServer&) = delete;
  AnchorServer& operator=(const AnchorServer&) = delete;

  int port() const { return port_; }
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
};

/// Splits "http://host:port" into its parts.
std::pair<std::string, int> parse_url(const std::string& url);

/// Cell-to-cell channel over HTTP, addressed through the deployment's cell URLs.
class HttpPeerTransport final : public PeerTransport {
 public:
  HttpPeerTransport(std::map<Address, std::string> urls, std::chrono::milliseconds timeout,
                    std::chrono::microseconds link_delay = {});

  Envelope forward(const Address& peer, const Envelope& fwd) override;
  void decide(const Address& peer, const Envelope& decision) override;
  std::vector<LedgerEntry> contract_history(const Address& peer, const Address& contract,
                                            std::uint64_t after_version) override;

 private:
  const std::string& url_of(const Address& peer) const;

  std::map<Address, std::string> urls_;
  std::chrono::milliseconds timeout_;
  std::chrono::microseconds link_delay_;
};

class HttpAnchorClient final : public AnchorApi {
 public:
  explicit HttpAnchorClient(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(10));

  ReportRecord submit_report(const Envelope& signed_report) override;
  std::optional<ReportRecord> get_report(const Address& cell, std::int64_t cycle) override;
  std::uint64_t submit_contingency(const Envelope& tx) override;
  std::vector<ContingencyItem> fetch_contingency(std::uint64_t since) override;
  std::vector<ReportRecord> reports();

 private:
  std::string url_;
  std::chrono::milliseconds timeout_;
};

/// What clients, auditors and the harness ask of a cell.
class CellClient {
 public:
  explicit CellClient(std::string url, std::chrono::milliseconds timeout = std::chrono::seconds(60),
                      std::chrono::microseconds link_delay = {});

  const std::string& url() const { return url_; }
  Receipt commit(const Envelope& tx);
  Json status();
  /// Signed snapshot header for `cycle`; the signer is returned alongside.
  std::pair<Snapshot, Address> fingerprint(std::int64_t cycle);
  SnapshotArchive snapshot(std::int64_t cycle);
  std::vector<LedgerEntry> ledger(std::uint64_t first, std::uint64_t last);
  std::optional<std::string> read(const Address& contract, const std::string& key);
  std::string cas_get(const Digest& hash);
  void inject_fault(const Json& fault);

 private:
  std::string url_;
  std::chrono::milliseconds timeout_;
  std::chrono::microseconds link_delay_;
};

}  // namespace blcm
