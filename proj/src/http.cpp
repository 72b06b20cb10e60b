#include "blcm/http.hpp"

#include <httplib.h>

namespace blcm {
namespace {

constexpr const char* kJson = "application/json";

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::NotFound:
    case ErrorCode::ArchiveUnavailable:
    case ErrorCode::MissingReport:
    case ErrorCode::UnknownContract:
      return 404;
    case ErrorCode::NotSubscribed:
    case ErrorCode::NotMember:
    case ErrorCode::NotAllowedCell:
      return 403;
    case ErrorCode::Conflict:
    case ErrorCode::StaleVersion:
    case ErrorCode::Busy:
    case ErrorCode::DuplicateReport:
      return 409;
    case ErrorCode::Unreachable:
    case ErrorCode::AnchorUnreachable:
      return 503;
    default:
      return 400;
  }
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  res.status = status_for(code);
  res.set_content(canonical_dump(Json{{"error", error_name(code)}, {"message", message}}), kJson);
}

using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

Handler guarded(Handler h) {
  return [h = std::move(h)](const httplib::Request& req, httplib::Response& res) {
    try {
      h(req, res);
    } catch (const Error& e) {
      send_error(res, e.code(), e.what());
    } catch (const Json::exception& e) {
      send_error(res, ErrorCode::Malformed, e.what());
    } catch (const std::exception& e) {
      send_error(res, ErrorCode::InvalidArgument, e.what());
    }
  };
}

std::string param(const httplib::Request& req, const char* name) {
  if (!req.has_param(name)) throw Error(ErrorCode::InvalidArgument, std::string("missing parameter ") + name);
  return req.get_param_value(name);
}

std::int64_t int_param(const httplib::Request& req, const char* name) {
  auto s = param(req, name);
  try {
    std::size_t used = 0;
    auto v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::InvalidArgument, std::string("parameter ") + name + " is not an integer");
  }
}

void reply(httplib::Response& res, const Json& j) { res.set_content(canonical_dump(j), kJson); }

void start_server(httplib::Server& server, const std::string& host, int& port, std::thread& thread) {
  server.new_task_queue = [] { return new httplib::ThreadPool(64); };
  server.set_keep_alive_max_count(1000);
  if (port == 0) {
    port = server.bind_to_any_port(host);
  } else if (!server.bind_to_port(host, port)) {
    port = -1;
  }
  if (port <= 0) throw Error(ErrorCode::Config, "cannot bind " + host);
  thread = std::thread([&server] { server.listen_after_bind(); });
}

// -- client side ---------------------------------------------------------------

struct Target {
  std::string host;
  int port;
};

Target target_of(const std::string& url) {
  auto [host, port] = parse_url(url);
  return {host, port};
}

[[noreturn]] void raise_from(const httplib::Result& res, ErrorCode unreachable, const std::string& url) {
  if (!res) throw Error(unreachable, url + ": " + httplib::to_string(res.error()));
  try {
    auto j = Json::parse(res->body);
    auto code = error_from_name(j.at("error").get<std::string>());
    std::string message = j.value("message", "");
    // The server's text already starts with the code name.
    if (auto prefix = std::string(error_name(code)) + ": "; message.starts_with(prefix))
      message.erase(0, prefix.size());
    throw Error(code, message);
  } catch (const Json::exception&) {
    throw Error(unreachable, url + ": HTTP " + std::to_string(res->status));
  }
}

struct Call {
  std::string url;
  std::chrono::milliseconds timeout;
  std::chrono::microseconds delay{};
  ErrorCode unreachable = ErrorCode::Unreachable;

  httplib::Client client() const {
    auto t = target_of(url);
    httplib::Client c(t.host, t.port);
    c.set_connection_timeout(timeout);
    c.set_read_timeout(timeout);
    c.set_write_timeout(timeout);
    return c;
  }

  void hop() const {
    if (delay.count() > 0) std::this_thread::sleep_for(delay);
  }

  std::string post(const std::string& path, const std::string& body) const {
    auto c = client();
    hop();
    auto res = c.Post(path, body, kJson);
    if (!res || res->status / 100 != 2) raise_from(res, unreachable, url);
    hop();
    return res->body;
  }

  std::optional<std::string> get(const std::string& path, bool allow_missing = false) const {
    auto c = client();
    hop();
    auto res = c.Get(path);
    if (res && res->status == 404 && allow_missing) return std::nullopt;
    if (!res || res->status / 100 != 2) raise_from(res, unreachable, url);
    hop();
    return res->body;
  }
};

std::vector<LedgerEntry> entries_from(const std::string& body) {
  std::vector<LedgerEntry> out;
  for (const auto& e : Json::parse(body)) out.push_back(LedgerEntry::from_json(e));
  return out;
}

}  // namespace

std::pair<std::string, int> parse_url(const std::string& url) {
  std::string_view s = url;
  if (s.starts_with("http://")) s.remove_prefix(7);
  if (auto slash = s.find('/'); slash != std::string_view::npos) s = s.substr(0, slash);
  auto colon = s.rfind(':');
  if (colon == std::string_view::npos) return {std::string(s), 80};
  try {
    return {std::string(s.substr(0, colon)), std::stoi(std::string(s.substr(colon + 1)))};
  } catch (const std::exception&) {
    throw Error(ErrorCode::Config, "bad url " + url);
  }
}

// -- cell server -----------------------------------------------------------------

struct CellServer::Impl {
  std::shared_ptr<Cell> cell;
  httplib::Server server;
  std::thread thread;
};

CellServer::CellServer(std::shared_ptr<Cell> cell, std::string host, int port)
    : impl_(std::make_unique<Impl>()), port_(port) {
  impl_->cell = std::move(cell);
  auto& s = impl_->server;
  Cell* c = impl_->cell.get();

  s.Post("/tx", guarded([c](const httplib::Request& req, httplib::Response& res) {
    reply(res, c->handle_commit(decode_envelope(req.body)).to_json());
  }));
  s.Post("/fwd", guarded([c](const httplib::Request& req, httplib::Response& res) {
    res.set_content(encode_envelope(c->handle_forward(decode_envelope(req.body))), kJson);
  }));
  s.Post("/decide", guarded([c](const httplib::Request& req, httplib::Response& res) {
    c->handle_decide(decode_envelope(req.body));
    reply(res, Json::object());
  }));
  s.Post("/fault", guarded([c](const httplib::Request& req, httplib::Response& res) {
    auto j = Json::parse(req.body);
    Fault f;
    f.behavior = parse_fault(j.value("behavior", "none"));
    f.delay = std::chrono::milliseconds(j.value("delay_ms", 0));
    if (auto t = j.find("target"); t != j.end() && !t->is_null()) f.target = Address::parse(t->get<std::string>());
    if (auto d = j.value("duration_ms", 0); d > 0)
      f.until = std::chrono::steady_clock::now() + std::chrono::milliseconds(d);
    c->inject_fault(f);
    reply(res, Json{{"fault", fault_name(f.behavior)}});
  }));
  s.Get("/fingerprint", guarded([c](const httplib::Request& req, httplib::Response& res) {
    auto cycle = int_param(req, "cycle");
    auto a = c->archive(cycle);
    if (!a) throw Error(ErrorCode::ArchiveUnavailable, "no snapshot for cycle " + std::to_string(cycle));
    auto env = make_envelope(c->key(), Address{}, Opcode::FingerprintGet, a->snapshot.to_json(),
                             SystemClock().now());
    res.set_content(encode_envelope(env), kJson);
  }));
  s.Get("/snapshot", guarded([c](const httplib::Request& req, httplib::Response& res) {
    auto cycle = int_param(req, "cycle");
    auto a = c->archive(cycle);
    if (!a) throw Error(ErrorCode::ArchiveUnavailable, "no snapshot for cycle " + std::to_string(cycle));
    res.set_content(a->encode(), kJson);
  }));
  s.Get("/status", guarded([c](const httplib::Request&, httplib::Response& res) {
    auto env = make_envelope(c->key(), Address{}, Opcode::Status, c->status(), SystemClock().now());
    res.set_content(encode_envelope(env), kJson);
  }));
  s.Get("/ledger", guarded([c](const httplib::Request& req, httplib::Response& res) {
    std::vector<LedgerEntry> entries;
    if (req.has_param("contract"))
      entries = c->contract_history(Address::parse(param(req, "contract")),
                                    static_cast<std::uint64_t>(int_param(req, "after_version")));
    else
      entries = c->ledger_slice(static_cast<std::uint64_t>(int_param(req, "from")),
                                static_cast<std::uint64_t>(int_param(req, "to")));
    Json out = Json::array();
    for (const auto& e : entries) out.push_back(e.to_json());
    reply(res, out);
  }));
  s.Get("/state", guarded([c](const httplib::Request& req, httplib::Response& res) {
    auto contract = Address::parse(param(req, "contract"));
    auto value = c->runtime().read(contract, param(req, "key"));
    reply(res, Json{{"value", value ? Json(to_hex(as_bytes(*value))) : Json()},
                    {"version", c->runtime().version(contract)}});
  }));
  s.Get("/cas", guarded([c](const httplib::Request& req, httplib::Response& res) {
    auto hash = Digest::from_hex(param(req, "hash"));
    auto blob = c->runtime().read(system_contracts::cas_id(), cas::blob_key(hash));
    if (!blob) throw Error(ErrorCode::NotFound, "no blob " + hash.hex());
    reply(res, Json{{"blob", to_hex(as_bytes(*blob))}});
  }));

  start_server(s, host, port_, impl_->thread);
}

CellServer::~CellServer() { stop(); }

void CellServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

// -- anchor server ---------------------------------------------------------------

struct AnchorServer::Impl {
  std::shared_ptr<Anchor> anchor;
  httplib::Server server;
  std::thread thread;
};

AnchorServer::AnchorServer(std::shared_ptr<Anchor> anchor, std::string host, int port)
    : impl_(std::make_unique<Impl>()), port_(port) {
  impl_->anchor = std::move(anchor);
  auto& s = impl_->server;
  Anchor* a = impl_->anchor.get();

  s.Post("/report", guarded([a](const httplib::Request& req, httplib::Response& res) {
    reply(res, a->submit_report(decode_envelope(req.body)).to_json());
  }));
  s.Get("/report", guarded([a](const httplib::Request& req, httplib::Response& res) {
    auto r = a->get_report(Address::parse(param(req, "cell")), int_param(req, "cycle"));
    if (!r) throw Error(ErrorCode::MissingReport, "no report");
    reply(res, r->to_json());
  }));
  s.Post("/contingency", guarded([a](const httplib::Request& req, httplib::Response& res) {
    reply(res, Json{{"position", a->submit_contingency(decode_envelope(req.body))}});
  }));
  s.Get("/contingency", guarded([a](const httplib::Request& req, httplib::Response& res) {
    Json out = Json::array();
    for (const auto& item : a->fetch_contingency(static_cast<std::uint64_t>(int_param(req, "since"))))
      out.push_back(Json{{"position", item.position}, {"envelope", envelope_to_json(item.envelope)}});
    reply(res, out);
  }));
  s.Get("/reports", guarded([a](const httplib::Request&, httplib::Response& res) {
    Json out = Json::array();
    for (const auto& r : a->reports()) out.push_back(r.to_json());
    reply(res, out);
  }));
  s.Get("/fees", guarded([a](const httplib::Request&, httplib::Response& res) {
    Json out = Json::array();
    for (const auto& f : a->fee_log()) out.push_back(Json{{"cell", f.cell.str()}, {"cycle", f.cycle}, {"gas", f.gas}});
    reply(res, out);
  }));

  start_server(s, host, port_, impl_->thread);
}

AnchorServer::~AnchorServer() { stop(); }

void AnchorServer::stop() {
  if (!impl_->thread.joinable()) return;
  impl_->server.stop();
  impl_->thread.join();
}

// -- peer transport ----------------------------------------------------------------

HttpPeerTransport::HttpPeerTransport(std::map<Address, std::string> urls, std::chrono::milliseconds timeout,
                                     std::chrono::microseconds link_delay)
    : urls_(std::move(urls)), timeout_(timeout), link_delay_(link_delay) {}

const std::string& HttpPeerTransport::url_of(const Address& peer) const {
  auto it = urls_.find(peer);
  if (it == urls_.end()) throw Error(ErrorCode::Unreachable, "no URL configured for " + peer.str());
  return it->second;
}

Envelope HttpPeerTransport::forward(const Address& peer, const Envelope& fwd) {
  Call call{url_of(peer), timeout_, link_delay_};
  return decode_envelope(call.post("/fwd", encode_envelope(fwd)));
}

void HttpPeerTransport::decide(const Address& peer, const Envelope& decision) {
  Call call{url_of(peer), timeout_, link_delay_};
  call.post("/decide", encode_envelope(decision));
}

std::vector<LedgerEntry> HttpPeerTransport::contract_history(const Address& peer, const Address& contract,
                                                             std::uint64_t after_version) {
  Call call{url_of(peer), timeout_, link_delay_};
  return entries_from(
      *call.get("/ledger?contract=" + contract.str() + "&after_version=" + std::to_string(after_version)));
}

// -- anchor client -------------------------------------------------------------------

HttpAnchorClient::HttpAnchorClient(std::string url, std::chrono::milliseconds timeout)
    : url_(std::move(url)), timeout_(timeout) {}

ReportRecord HttpAnchorClient::submit_report(const Envelope& signed_report) {
  Call call{url_, timeout_, {}, ErrorCode::AnchorUnreachable};
  return ReportRecord::from_json(Json::parse(call.post("/report", encode_envelope(signed_report))));
}

std::optional<ReportRecord> HttpAnchorClient::get_report(const Address& cell, std::int64_t cycle) {
  Call call{url_, timeout_, {}, ErrorCode::AnchorUnreachable};
  auto body = call.get("/report?cell=" + cell.str() + "&cycle=" + std::to_string(cycle), true);
  if (!body) return std::nullopt;
  return ReportRecord::from_json(Json::parse(*body));
}

std::uint64_t HttpAnchorClient::submit_contingency(const Envelope& tx) {
  Call call{url_, timeout_, {}, ErrorCode::AnchorUnreachable};
  return Json::parse(call.post("/contingency", encode_envelope(tx))).at("position").get<std::uint64_t>();
}

std::vector<ContingencyItem> HttpAnchorClient::fetch_contingency(std::uint64_t since) {
  Call call{url_, timeout_, {}, ErrorCode::AnchorUnreachable};
  std::vector<ContingencyItem> out;
  for (const auto& j : Json::parse(*call.get("/contingency?since=" + std::to_string(since))))
    out.push_back({j.at("position").get<std::uint64_t>(), envelope_from_json(j.at("envelope"))});
  return out;
}

std::vector<ReportRecord> HttpAnchorClient::reports() {
  Call call{url_, timeout_, {}, ErrorCode::AnchorUnreachable};
  std::vector<ReportRecord> out;
  for (const auto& j : Json::parse(*call.get("/reports"))) out.push_back(ReportRecord::from_json(j));
  return out;
}

// -- cell client -------------------------------------------------------------------

CellClient::CellClient(std::string url, std::chrono::milliseconds timeout, std::chrono::microseconds link_delay)
    : url_(std::move(url)), timeout_(timeout), link_delay_(link_delay) {}

Receipt CellClient::commit(const Envelope& tx) {
  Call call{url_, timeout_, link_delay_};
  return Receipt::from_json(Json::parse(call.post("/tx", encode_envelope(tx))));
}

Json CellClient::status() {
  Call call{url_, timeout_};
  auto env = decode_envelope(*call.get("/status"));
  verify_envelope(env, std::nullopt);
  return env.payload.data;
}

std::pair<Snapshot, Address> CellClient::fingerprint(std::int64_t cycle) {
  Call call{url_, timeout_, {}, ErrorCode::ArchiveUnavailable};
  auto env = decode_envelope(*call.get("/fingerprint?cycle=" + std::to_string(cycle)));
  auto signer = verify_envelope(env, std::nullopt);
  return {Snapshot::from_json(env.payload.data), signer};
}

SnapshotArchive CellClient::snapshot(std::int64_t cycle) {
  Call call{url_, timeout_, {}, ErrorCode::ArchiveUnavailable};
  return SnapshotArchive::decode(*call.get("/snapshot?cycle=" + std::to_string(cycle)));
}

std::vector<LedgerEntry> CellClient::ledger(std::uint64_t first, std::uint64_t last) {
  Call call{url_, timeout_, {}, ErrorCode::ArchiveUnavailable};
  return entries_from(*call.get("/ledger?from=" + std::to_string(first) + "&to=" + std::to_string(last)));
}

std::optional<std::string> CellClient::read(const Address& contract, const std::string& key) {
  Call call{url_, timeout_};
  auto j = Json::parse(*call.get("/state?contract=" + contract.str() + "&key=" + httplib::detail::encode_url(key)));
  if (j.at("value").is_null()) return std::nullopt;
  auto raw = from_hex(j.at("value").get<std::string>());
  return std::string(raw.begin(), raw.end());
}

std::string CellClient::cas_get(const Digest& hash) {
  Call call{url_, timeout_};
  auto raw = from_hex(Json::parse(*call.get("/cas?hash=" + hash.hex())).at("blob").get<std::string>());
  return std::string(raw.begin(), raw.end());
}

void CellClient::inject_fault(const Json& fault) {
  Call call{url_, timeout_};
  call.post("/fault", canonical_dump(fault));
}

}  // namespace blcm
