// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails. Pass criterion numbers as
// arguments to run a subset.
#include <algorithm>
#include <array>
#include <barrier>
#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "blcm/cost_model.hpp"
#include "support.hpp"

using namespace blcm;
using namespace blcm::testing;
using namespace std::chrono_literals;

namespace {

struct Result {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      if (pass) detail << "failed: ";
      else detail << "; ";
      detail << what;
      pass = false;
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

std::string fixed(double v, int digits = 3) {
  std::ostringstream o;
  o << std::fixed << std::setprecision(digits) << v;
  return o.str();
}

std::uint64_t fm_balance(Cell& cell, const Address& who) {
  return fastmoney::balance_of(cell.runtime().store_copy(system_contracts::genesis_fastmoney_id()), who);
}

// ---------------------------------------------------------------------------

void fee_table(Result& r) {
  const std::array<std::pair<std::int64_t, std::uint64_t>, 5> table{
      {{600, 7083792}, {1800, 2361264}, {3600, 1180632}, {28800, 147579}, {86400, 49193}}};

  auto start = std::chrono::steady_clock::now();
  std::string cmd = std::string(BLCM_CLI_PATH) + " cost";
  for (const auto& [period, _] : table) cmd += " --period " + std::to_string(period);
  std::map<std::int64_t, std::uint64_t> cli;
  if (FILE* pipe = popen(cmd.c_str(), "r")) {
    char line[256];
    while (std::fgets(line, sizeof line, pipe)) {
      long long period = 0;
      unsigned long long gas = 0;
      if (std::sscanf(line, "%lld,%llu", &period, &gas) == 2) cli[period] = gas;
    }
    r.check(pclose(pipe) == 0, "cost command exited with an error");
  } else {
    r.check(false, "cannot run " + cmd);
  }
  double cli_time = seconds_since(start);

  start = std::chrono::steady_clock::now();
  for (const auto& [period, gas] : table) {
    auto got = cost::estimate_fees(period).gas_per_day;
    r.check(got == gas, "library gives " + std::to_string(got) + " for period " + std::to_string(period));
    r.check(cli.count(period) && cli[period] == gas, "cost command disagrees for period " + std::to_string(period));
  }
  double lib_time = seconds_since(start);
  r.check(cli_time < 1.0, "cost command took " + fixed(cli_time) + " s");
  r.detail << (r.pass ? "" : " | ") << "5/5 gas values, cost command " << fixed(cli_time * 1000, 1) << " ms, library "
           << fixed(lib_time * 1e6, 1) << " us";
}

// ---------------------------------------------------------------------------

void double_spend(Result& r) {
  constexpr int kTrials = 200;
  constexpr std::size_t kCells = 3;
  auto d = deploy(kCells, kTrials, 10);
  std::mt19937_64 rng(2);

  struct Outcome2 {
    int accepted = 0;
    int rejected = 0;
    int attempts = 0;
    std::optional<Address> winner;
  };
  std::vector<std::array<Address, 2>> recipients(kTrials);
  std::vector<Outcome2> outcomes(kTrials);
  int violations = 0;
  int errors = 0;

  for (int t = 0; t < kTrials; ++t) {
    recipients[t] = {KeyPair::generate().address, KeyPair::generate().address};
    std::size_t a = rng() % kCells, b = (a + 1 + rng() % (kCells - 1)) % kCells;
    std::array<std::size_t, 2> via{a, b};
    std::array<std::uint64_t, 2> seeds{rng(), rng()};
    std::barrier sync(2);
    std::mutex m;
    auto run = [&](int side) {
      std::mt19937_64 local(seeds[side]);
      sync.arrive_and_wait();
      for (int attempt = 0; attempt < 100; ++attempt) {
        auto tx = make_transfer(d.clients[t], recipients[t][side], 10, d.now());
        Receipt rc;
        try {
          rc = d.net->submit(via[side], tx);
        } catch (const Error&) {
          std::lock_guard lock(m);
          ++errors;
          return;
        }
        std::lock_guard lock(m);
        ++outcomes[t].attempts;
        if (rc.outcome == Outcome::Reverted) {
          std::this_thread::sleep_for(std::chrono::microseconds(local() % 2000));
          continue;
        }
        if (rc.outcome == Outcome::Accepted) {
          ++outcomes[t].accepted;
          outcomes[t].winner = recipients[t][side];
        } else {
          ++outcomes[t].rejected;
        }
        return;
      }
    };
    std::thread x(run, 0), y(run, 1);
    x.join();
    y.join();
    if (outcomes[t].accepted != 1 || outcomes[t].rejected != 1) ++violations;
  }
  r.check(d.net->settle(), "cells did not settle");

  // Oracle 1: balances implied by the accepted receipts alone.
  std::map<Address, std::uint64_t> expected;
  for (int t = 0; t < kTrials; ++t) {
    expected[d.clients[t].address] = outcomes[t].accepted ? 0 : 10;
    for (const auto& who : recipients[t]) expected[who] = outcomes[t].winner == who ? 10 : 0;
  }
  int balance_mismatches = 0;
  for (std::size_t c = 0; c < kCells; ++c)
    for (const auto& [who, amount] : expected)
      if (fm_balance(d.net->cell(c), who) != amount) ++balance_mismatches;

  // Oracle 2: a fresh runtime replaying the finalized ledger in order.
  auto replay = Runtime::genesis(d.net->config().allocation);
  auto& ledger = d.net->cell(0).ledger();
  for (const auto& e : ledger.slice(1, ledger.last_seq()))
    if (e.outcome != Outcome::Reverted) replay->apply(e.envelope);
  const auto fm = d.fm();
  int fingerprint_mismatches = 0;
  for (std::size_t c = 0; c < kCells; ++c)
    if (d.net->cell(c).runtime().fingerprint(fm) != replay->fingerprint(fm)) ++fingerprint_mismatches;

  int attempts = 0;
  for (const auto& o : outcomes) attempts += o.attempts;
  r.check(violations == 0, std::to_string(violations) + " trials without exactly one accepted transfer");
  r.check(errors == 0, std::to_string(errors) + " submissions raised errors");
  r.check(balance_mismatches == 0, std::to_string(balance_mismatches) + " balances differ from the receipts");
  r.check(fingerprint_mismatches == 0, std::to_string(fingerprint_mismatches) + " cells differ from the replay");
  r.detail << (r.pass ? "" : " | ") << kTrials << " trials, " << violations << " violations, " << attempts
           << " submissions (" << attempts - 2 * kTrials << " retried after conflict), " << kCells
           << " cells agree with the replay oracle";
}

// ---------------------------------------------------------------------------

bool faulty_deployment(std::optional<std::size_t> honest, std::uint64_t seed, Result& r, std::string& kinds) {
  constexpr std::size_t kCells = 8;
  auto d = deploy(kCells, 4, 1000);
  std::mt19937_64 rng(seed);
  std::vector<FaultBehavior> faults;
  for (std::size_t i = 0; i < kCells; ++i) faults.push_back(i % 2 ? FaultBehavior::Tamper : FaultBehavior::LateReport);
  std::shuffle(faults.begin(), faults.end(), rng);
  kinds.clear();
  for (std::size_t i = 0; i < kCells; ++i) {
    if (honest && *honest == i) {
      kinds += 'H';
      continue;
    }
    d.net->inject_fault(i, Fault{faults[i]});
    kinds += faults[i] == FaultBehavior::Tamper ? 'T' : 'L';
  }
  constexpr std::int64_t kCycles = 3;
  for (std::int64_t c = 0; c < kCycles; ++c) {
    for (int k = 0; k < 6; ++k) {
      auto rc = d.net->submit(rng() % kCells, make_transfer(d.clients[rng() % 4], d.clients[rng() % 4].address,
                                                            1 + rng() % 20, d.now()));
      r.check(rc.outcome == Outcome::Accepted, "transfer not accepted in the faulty deployment");
    }
    d.stage(c);
  }
  // Late reporters finally submit once their windows have closed.
  d.clock->set(deadline_of_cycle(kCycles + 1, d.inv()) + 1);
  for (std::size_t i = 0; i < kCells; ++i) d.net->cell(i).retry_reports();

  Auditor auditor(d.net->config(), d.net->anchor());
  for (auto& s : d.net->audit_sources()) auditor.add_source(s);
  auditor.audit_through(kCycles - 1);
  std::map<Address, bool> all_valid;
  for (const auto& v : auditor.verdicts()) {
    auto [it, _] = all_valid.emplace(v.cell, true);
    it->second = it->second && v.valid();
  }
  for (std::size_t i = 0; i < kCells; ++i) {
    bool expect_valid = honest && *honest == i;
    r.check(all_valid[d.net->cell(i).address()] == expect_valid,
            "cell " + std::to_string(i) + " audited " + (expect_valid ? "invalid" : "valid"));
  }
  return auditor.deployment_valid();
}

void fault_tolerance(Result& r) {
  std::mt19937_64 rng(3);
  std::vector<std::string> seen;
  constexpr int kRuns = 3;
  for (int run = 0; run < kRuns; ++run) {
    std::string kinds;
    std::size_t honest = rng() % 8;
    bool one = faulty_deployment(honest, rng(), r, kinds);
    r.check(one, "deployment with one honest cell judged invalid (" + kinds + ")");
    seen.push_back(kinds);
    bool none = faulty_deployment(std::nullopt, rng(), r, kinds);
    r.check(!none, "deployment with every cell faulted judged valid (" + kinds + ")");
    seen.push_back(kinds);
  }
  r.detail << (r.pass ? "" : " | ") << kRuns << " runs each of 7 faulted + 1 honest (valid) and 8 faulted (invalid); "
           << "fault layouts";
  for (const auto& s : seen) r.detail << ' ' << s;
}

// ---------------------------------------------------------------------------

void write_once(Result& r) {
  ManualClock clock(kStart);
  std::vector<KeyPair> cells;
  std::vector<Address> addrs;
  for (int i = 0; i < 8; ++i) {
    cells.push_back(KeyPair::generate());
    addrs.push_back(cells.back().address);
  }
  Anchor anchor(addrs, clock);
  const Address anchor_addr = KeyPair::generate().address;
  std::mt19937_64 rng(4);
  auto random_digest = [&] {
    Bytes b(32);
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return keccak256(ByteView(b));
  };
  std::vector<std::pair<std::size_t, std::int64_t>> used;
  std::set<std::pair<std::size_t, std::int64_t>> taken;
  std::map<std::string, int> by_kind;
  int accepted_twice = 0, wrong_error = 0, record_changed = 0;
  constexpr int kAttempts = 1000;
  for (int attempt = 0; attempt < kAttempts; ++attempt) {
    std::size_t cell;
    std::int64_t cycle;
    Digest first_fp;
    std::optional<Envelope> first_env;
    // Half the attempts target a fresh (cell, cycle), the rest revisit one.
    if (used.empty() || rng() % 2) {
      do {
        cell = rng() % cells.size();
        cycle = static_cast<std::int64_t>(rng() % 100000);
      } while (!taken.insert({cell, cycle}).second);
      first_fp = random_digest();
      first_env = make_envelope(cells[cell], anchor_addr, Opcode::ReportSubmit, report_data(cycle, first_fp),
                                clock.now());
      anchor.submit_report(*first_env);
      used.push_back({cell, cycle});
    } else {
      std::tie(cell, cycle) = used[rng() % used.size()];
      first_fp = anchor.get_report(addrs[cell], cycle)->fingerprint;
    }
    auto before = anchor.get_report(addrs[cell], cycle);
    clock.advance(static_cast<Timestamp>(rng() % 5));

    std::string kind;
    std::function<void()> resubmit;
    switch (rng() % 4) {
      case 0:
        kind = first_env ? "replayed envelope" : "same digest";
        resubmit = [&] {
          anchor.submit_report(first_env ? *first_env
                                         : make_envelope(cells[cell], anchor_addr, Opcode::ReportSubmit,
                                                         report_data(cycle, first_fp), clock.now()));
        };
        break;
      case 1:
        kind = "same digest";
        resubmit = [&] {
          anchor.submit_report(make_envelope(cells[cell], anchor_addr, Opcode::ReportSubmit,
                                             report_data(cycle, first_fp), clock.now()));
        };
        break;
      case 2:
        kind = "new digest";
        resubmit = [&] {
          anchor.submit_report(make_envelope(cells[cell], anchor_addr, Opcode::ReportSubmit,
                                             report_data(cycle, random_digest()), clock.now()));
        };
        break;
      default:
        kind = "direct call";
        resubmit = [&] { anchor.submit_report(addrs[cell], cycle, rng() % 2 ? first_fp : random_digest(), clock.now()); };
    }
    ++by_kind[kind];
    try {
      resubmit();
      ++accepted_twice;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::DuplicateReport) ++wrong_error;
    }
    if (anchor.get_report(addrs[cell], cycle) != before) ++record_changed;
  }
  r.check(accepted_twice == 0, std::to_string(accepted_twice) + " second reports accepted");
  r.check(wrong_error == 0, std::to_string(wrong_error) + " rejections with the wrong error");
  r.check(record_changed == 0, std::to_string(record_changed) + " stored records changed");
  r.detail << (r.pass ? "" : " | ") << kAttempts << " second submissions rejected (";
  bool first = true;
  for (const auto& [k, n] : by_kind) {
    r.detail << (first ? "" : ", ") << k << ' ' << n;
    first = false;
  }
  r.detail << ")";
}

// ---------------------------------------------------------------------------

/// Recomputes outcome, version and post-state of every entry the way a
/// careful forger would after rewriting the slice.
void make_consistent(std::vector<LedgerEntry>& txs, const SnapshotArchive& prev) {
  auto rt = Runtime::from_archive(prev.contracts);
  for (std::size_t i = 0; i < txs.size(); ++i) {
    auto& e = txs[i];
    e.seq = txs[0].seq + i;
    if (e.outcome == Outcome::Reverted) continue;
    try {
      e.outcome = rt->apply(e.envelope).outcome;
    } catch (const Error&) {
      continue;
    }
    const auto& c = e.envelope.payload.recipient;
    if (rt->has_contract(c)) {
      e.contract_version = rt->version(c);
      e.post_fingerprint = rt->fingerprint(c);
    }
  }
}

void succession(Result& r) {
  ConsortiumOptions o;
  o.retention = 4;
  const std::size_t kTraders = 6, kContested = 15;
  auto clients = make_clients(kTraders + kContested);
  for (std::size_t i = 0; i < clients.size(); ++i)
    o.allocation.emplace_back(clients[i].address, i < kTraders ? 1000 : 10);
  auto d = deploy(3, 0, 0, o);
  d.clients = clients;
  std::mt19937_64 rng(5);

  constexpr std::int64_t kCycles = 3;
  std::size_t submitted = 0;
  // Pairs of ledger positions whose order decides who gets the coins.
  std::map<std::int64_t, std::vector<std::pair<Nonce, Nonce>>> contested;
  for (std::int64_t c = 0; c < kCycles; ++c) {
    for (int k = 0; k < 30; ++k) {
      auto from = rng() % kTraders, to = rng() % kTraders;
      d.net->submit(rng() % 3, make_transfer(clients[from], clients[to].address, 1 + rng() % 50, d.now()));
      ++submitted;
      if (k % 6 == 5) {
        auto& x = clients[kTraders + c * 5 + k / 6];
        auto t1 = make_transfer(x, KeyPair::generate().address, 10, d.now());
        auto t2 = make_transfer(x, KeyPair::generate().address, 10, d.now());
        auto r1 = d.net->submit(rng() % 3, t1);
        auto r2 = d.net->submit(rng() % 3, t2);
        r.check(r1.outcome == Outcome::Accepted && r2.outcome == Outcome::Rejected, "contested pair misbehaved");
        contested[c].push_back({t1.payload.nonce, t2.payload.nonce});
        submitted += 2;
      }
    }
    d.stage(c);
  }
  r.check(submitted >= 100, "only " + std::to_string(submitted) + " transactions");

  int honest_ok = 0, honest_total = 0;
  std::map<std::string, std::pair<int, int>> detect;  // class -> (detected, total)
  for (std::size_t cell = 0; cell < 3; ++cell) {
    auto& cl = d.net->cell(cell);
    for (std::int64_t c = 0; c < kCycles; ++c) {
      auto prev = c == 0 ? genesis_archive(d.net->config().allocation) : *cl.archive(c - 1);
      auto next = *cl.archive(c);
      auto txs = cl.ledger_slice(next.snapshot.first_seq, next.snapshot.last_seq);
      ++honest_total;
      std::string why;
      if (audit_succession(prev, txs, next, &why)) ++honest_ok;
      else r.check(false, "untampered cycle " + std::to_string(c) + " rejected: " + why);
      if (cell != 0) continue;

      auto attempt = [&](const std::string& cls, std::vector<LedgerEntry> tampered, bool consistent) {
        if (consistent) make_consistent(tampered, prev);
        auto& [hit, total] = detect[cls];
        ++total;
        if (!audit_succession(prev, tampered, next)) ++hit;
      };
      for (std::size_t i = 0; i < txs.size(); ++i) {
        auto del = txs;
        del.erase(del.begin() + static_cast<std::ptrdiff_t>(i));
        attempt("delete", del, false);
        attempt("delete", del, true);
        if (txs[i].envelope.payload.data.value("op", "") == "transfer") {
          auto alt = txs;
          auto amount = alt[i].envelope.payload.data.at("amount").get<std::uint64_t>();
          alt[i].envelope.payload.data["amount"] = amount + 1 + rng() % 100;
          attempt("alter amount", alt, false);
          attempt("alter amount", alt, true);
        }
      }
      for (const auto& [n1, n2] : contested[c]) {
        auto pos = [&](const Nonce& n) {
          return std::find_if(txs.begin(), txs.end(), [&](const LedgerEntry& e) { return e.envelope.payload.nonce == n; }) -
                 txs.begin();
        };
        auto sw = txs;
        std::swap(sw[pos(n1)], sw[pos(n2)]);
        attempt("reorder", sw, false);
        attempt("reorder", sw, true);
      }
    }
  }
  r.check(honest_ok == honest_total, "honest slices rejected");
  for (const auto& [cls, counts] : detect)
    r.check(counts.first == counts.second, cls + " detected " + std::to_string(counts.first) + "/" +
                                               std::to_string(counts.second));
  r.detail << (r.pass ? "" : " | ") << submitted << " transactions over " << kCycles << " cycles, " << honest_ok << "/"
           << honest_total << " honest successions accepted; detection";
  for (const auto& [cls, counts] : detect)
    r.detail << ' ' << cls << ' ' << counts.first << '/' << counts.second;
}

// ---------------------------------------------------------------------------

void censorship(Result& r) {
  constexpr std::size_t kCells = 3;
  auto d = deploy(kCells, 6, 1000);
  for (std::size_t i = 0; i < kCells; ++i) d.net->inject_fault(i, Fault{FaultBehavior::Censor});
  std::mt19937_64 rng(6);

  struct Escaped {
    Envelope tx;
    std::int64_t cycle;
  };
  std::vector<Escaped> escaped;
  int refused = 0;
  constexpr std::int64_t kCycles = 4;
  for (std::int64_t c = 0; c < kCycles + 2; ++c) {
    if (c < kCycles) {
      for (int k = 0; k < 5; ++k) {
        auto tx = make_transfer(d.clients[rng() % 6], d.clients[rng() % 6].address, 1 + rng() % 10, d.now());
        for (std::size_t i = 0; i < kCells; ++i) {
          try {
            d.net->submit(i, tx);
          } catch (const Error& e) {
            if (e.code() == ErrorCode::NotSubscribed) ++refused;
          }
        }
        d.net->escape(tx);
        escaped.push_back({tx, c});
      }
    }
    d.stage(c);
    d.net->settle();
    for (const auto& e : escaped) {
      if (c != e.cycle + 1) continue;
      // Two stages have passed since it was escaped.
      for (std::size_t i = 0; i < kCells; ++i) {
        auto entry = d.net->cell(i).ledger().find(e.tx.payload.sender, e.tx.payload.nonce);
        r.check(entry && entry->outcome != Outcome::Reverted,
                "escaped transaction missing on cell " + std::to_string(i) + " after two stages");
      }
    }
  }
  std::size_t first_stage = 0;
  for (const auto& e : escaped) {
    auto entry = d.net->cell(0).ledger().find(e.tx.payload.sender, e.tx.payload.nonce);
    if (entry && entry->cycle == e.cycle + 1) ++first_stage;
  }
  r.check(refused == static_cast<int>(escaped.size() * kCells), "censoring cells accepted client commits");
  r.detail << (r.pass ? "" : " | ") << escaped.size() << " censored transactions escaped, all executed on " << kCells
           << " cells within 2 stages (" << first_stage << " at the first stage)";
}

// ---------------------------------------------------------------------------

void determinism(Result& r) {
  ConsortiumOptions o;
  o.retention = 4;
  auto d = deploy(3, 5, 100, o);
  std::mt19937_64 rng(7);
  std::vector<Digest> blobs;
  for (std::int64_t c = 0; c < 3; ++c) {
    for (int k = 0; k < 12; ++k)
      d.net->submit(rng() % 3, make_transfer(d.clients[rng() % 5], d.clients[rng() % 5].address, 1 + rng() % 60,
                                             d.now()));
    auto put = d.net->submit(rng() % 3, make_cas_put(d.clients[c], "blob " + std::to_string(c), d.now()));
    blobs.push_back(Digest::from_hex(put.result.at("hash").get<std::string>()));
    if (c > 0) d.net->submit(rng() % 3, make_cas_ref(d.clients[0], "release", blobs[c - 1], d.now()));
    if (c == 1) {
      Store init{{fastmoney::balance_key(d.clients[4].address), "77"}};
      d.net->submit(0, make_deploy(d.clients[4], "fastmoney", "second coin", true, init, d.now()));
    }
    d.stage(c);
  }
  auto& cell = d.net->cell(2);
  std::vector<Snapshot> headers;
  for (std::int64_t c = 0; c < 3; ++c) headers.push_back(cell.archive(c)->snapshot);
  auto ledger = cell.ledger_slice(1, cell.ledger().last_seq());
  // The second run works from a copy that went through the wire format.
  std::vector<LedgerEntry> reparsed;
  for (const auto& e : ledger) reparsed.push_back(LedgerEntry::from_json(Json::parse(e.to_json().dump())));

  auto a = replay_archives(d.net->config(), cell.address(), ledger, headers);
  auto b = replay_archives(d.net->config(), cell.address(), reparsed, headers);
  r.check(a.size() == 3 && b.size() == 3, "replay produced the wrong number of archives");
  std::size_t bytes = 0;
  for (std::size_t c = 0; c < std::min(a.size(), b.size()); ++c) {
    auto ea = a[c].encode(), eb = b[c].encode();
    bytes += ea.size();
    r.check(ea == eb, "replays differ at cycle " + std::to_string(c));
    r.check(a[c].snapshot.combined == b[c].snapshot.combined, "combined differs at cycle " + std::to_string(c));
    r.check(ea == cell.archive(static_cast<std::int64_t>(c))->encode(), "replay differs from the cell at cycle " +
                                                                           std::to_string(c));
    for (std::size_t i = 0; i < 3; ++i)
      r.check(d.net->cell(i).archive(static_cast<std::int64_t>(c))->snapshot.combined == a[c].snapshot.combined,
              "cell " + std::to_string(i) + " disagrees at cycle " + std::to_string(c));
  }
  r.detail << (r.pass ? "" : " | ") << ledger.size() << " ledger entries, 3 cycles; two replays byte-identical ("
           << bytes << " bytes) and equal to every cell's archives";
}

// ---------------------------------------------------------------------------

struct Scaling {
  std::map<std::size_t, LatencyStats> runs;
};

Scaling latency_sweep(std::chrono::microseconds client_delay, std::chrono::microseconds cell_delay,
                      std::size_t n_tx) {
  Scaling s;
  for (std::size_t cells : {2, 4, 8}) {
    ConsortiumOptions o;
    o.size = cells;
    o.lambda = 3600;
    o.client_link_delay = client_delay;
    o.cell_link_delay = cell_delay;
    auto clients = make_clients(100);
    o.allocation = allocation_for(clients, 1000);
    auto net = Consortium::spawn(o);
    LoadProfile p;
    p.n_clients = clients.size();
    p.n_tx = n_tx;
    s.runs[cells] = run_load(p, cells, clients, [&](std::size_t i, const Envelope& tx) { return net->submit(i, tx); },
                             net->clock(), net->config().invariants);
    net->settle();
  }
  return s;
}

void scaling(Result& r) {
  auto start = std::chrono::steady_clock::now();
  auto emulated = latency_sweep(15ms, 1ms, 500);
  auto bare = latency_sweep(0us, 0us, 500);
  for (auto* sweep : {&emulated, &bare})
    for (const auto& [cells, st] : sweep->runs)
      r.check(st.accepted == 500 && st.failures == 0 && st.invalid_receipts == 0,
              std::to_string(cells) + "-cell run: " + std::to_string(st.accepted) + " accepted, " +
                  std::to_string(st.failures) + " failures, " + std::to_string(st.invalid_receipts) +
                  " invalid receipts");
  double r24 = emulated.runs[4].p90 / emulated.runs[2].p90;
  double r48 = emulated.runs[8].p90 / emulated.runs[4].p90;
  r.check(r24 < 2.0, "p90 ratio 2->4 is " + fixed(r24, 2));
  r.check(r48 < 2.0, "p90 ratio 4->8 is " + fixed(r48, 2));
  double elapsed = seconds_since(start);
  r.check(elapsed <= 600, "took " + fixed(elapsed, 0) + " s");
  auto describe = [&](const char* label, Scaling& s) {
    r.detail << ' ' << label << " {";
    bool first = true;
    for (const auto& [cells, st] : s.runs) {
      r.detail << (first ? "" : ", ") << cells << " cells: p50 " << fixed(st.p50 * 1000, 1) << " ms, p90 "
               << fixed(st.p90 * 1000, 1) << " ms, " << fixed(st.throughput, 1) << " tx/s";
      first = false;
    }
    r.detail << "}";
  };
  r.detail << (r.pass ? "" : " | ") << "500 sequential transfers; p90 ratio 2->4 " << fixed(r24, 2) << ", 4->8 "
           << fixed(r48, 2) << ";";
  describe("15 ms client / 1 ms cell links", emulated);
  describe("no link delay", bare);
  r.detail << "; " << fixed(elapsed, 0) << " s";
}

// ---------------------------------------------------------------------------

/// Wraps the in-process network and records the serialized size of every
/// message per kind.
class MeteredTransport final : public PeerTransport {
 public:
  explicit MeteredTransport(PeerTransport& inner) : inner_(inner) {}
  Envelope forward(const Address& peer, const Envelope& fwd) override {
    note("forward", encode_envelope(fwd).size());
    auto confirm = inner_.forward(peer, fwd);
    note("confirm", encode_envelope(confirm).size());
    return confirm;
  }
  void decide(const Address& peer, const Envelope& decision) override {
    note("decide", encode_envelope(decision).size());
    inner_.decide(peer, decision);
  }
  std::vector<LedgerEntry> contract_history(const Address& peer, const Address& contract,
                                            std::uint64_t after_version) override {
    return inner_.contract_history(peer, contract, after_version);
  }
  void note(const std::string& kind, std::size_t size) {
    std::lock_guard lock(mutex_);
    auto& m = max_[kind];
    m = std::max(m, size);
  }
  std::map<std::string, std::size_t> max() const {
    std::lock_guard lock(mutex_);
    return max_;
  }

 private:
  PeerTransport& inner_;
  mutable std::mutex mutex_;
  std::map<std::string, std::size_t> max_;
};

void message_size(Result& r) {
  constexpr std::size_t kCells = 8;
  ManualClock clock(kStart);
  auto clients = make_clients(4);
  DeploymentConfig cfg;
  auto& inv = cfg.invariants;
  inv.deployment_id = DeploymentId::from_span(random_nonce().view());
  inv.lambda = 60;
  inv.t0 = (kStart / 60 + 1) * 60;
  inv.delta = 2000ms;
  std::vector<KeyPair> keys;
  for (std::size_t i = 0; i < kCells; ++i) {
    keys.push_back(KeyPair::generate());
    inv.cell_addresses.push_back(keys.back().address);
  }
  cfg.anchor_address = KeyPair::generate().address;
  cfg.allocation = allocation_for(clients, 1000000000);
  Anchor anchor(inv.cell_addresses, clock);
  LocalNetwork net;
  MeteredTransport metered(net);
  std::vector<std::shared_ptr<Cell>> cells;
  for (const auto& k : keys) {
    cells.push_back(std::make_shared<Cell>(cfg, k, clock, metered, anchor));
    net.attach(cells.back());
  }
  std::mt19937_64 rng(9);
  std::size_t accepted = 0;
  for (int k = 0; k < 50; ++k) {
    // Largest amounts and fresh recipients give the longest payloads.
    auto tx = make_transfer(clients[rng() % 4], KeyPair::generate().address, 100000 + rng() % 900000, clock.now());
    metered.note("client -> cell (commit envelope)", encode_envelope(tx).size());
    auto receipt = cells[rng() % kCells]->handle_commit(tx);
    metered.note("cell -> client (receipt)", receipt.to_json().dump().size());
    if (receipt.outcome == Outcome::Accepted && receipt.confirmations.size() == kCells) ++accepted;
  }
  for (auto& c : cells) c->wait_idle(10s);
  r.check(accepted == 50, "only " + std::to_string(accepted) + " transfers accepted by all cells");
  auto sizes = metered.max();
  r.detail << (r.pass ? "" : " | ") << kCells << " cells, largest of 50 transfers:";
  for (const auto& [kind, size] : sizes) {
    r.check(size <= 8192, kind + " is " + std::to_string(size) + " bytes");
    r.detail << ' ' << kind << ' ' << size << " B;";
  }
  for (auto& c : cells) c->stop();
}

// ---------------------------------------------------------------------------

void cas_end_to_end(Result& r) {
  ConsortiumOptions o;
  o.http = true;
  auto d = deploy(2, 2, 10, o);
  const Address cas_id = system_contracts::cas_id();
  const std::string blob("acceptance \x00 blob", 17);
  std::vector<CellClient> api{CellClient(d.net->cell_url(0)), CellClient(d.net->cell_url(1))};

  auto refcount = [&](std::size_t cell, const Digest& h) -> std::optional<std::uint64_t> {
    auto raw = api[cell].read(cas_id, cas::ref_key(h));
    if (!raw) return std::nullopt;
    return std::stoull(*raw);
  };
  auto present = [&](std::size_t cell, const Digest& h) {
    try {
      return api[cell].cas_get(h) == blob;
    } catch (const Error& e) {
      if (e.code() == ErrorCode::NotFound) return false;
      throw;
    }
  };

  auto first = api[0].commit(make_cas_put(d.clients[0], blob, d.now()));
  r.check(first.outcome == Outcome::Accepted, "put not accepted");
  auto h = Digest::from_hex(first.result.at("hash").get<std::string>());
  r.check(h == fingerprint_bytes(blob), "put returned the wrong hash");
  d.net->settle();
  r.check(present(0, h) && present(1, h), "blob not readable on both cells");
  auto second = api[1].commit(make_cas_put(d.clients[1], blob, d.now()));
  r.check(second.outcome == Outcome::Accepted, "duplicate put not accepted");
  d.net->settle();
  r.check(refcount(0, h) == 2u && refcount(1, h) == 2u, "refcount is not 2 after a duplicate put");

  d.stage(0);
  r.check(present(0, h) && present(1, h), "referenced blob purged");
  for (int k = 0; k < 2; ++k)
    r.check(api[k].commit(make_cas_ref(d.clients[k], "release", h, d.now())).outcome == Outcome::Accepted,
            "release not accepted");
  d.net->settle();
  r.check(refcount(0, h) == 0u && refcount(1, h) == 0u, "refcount is not 0 after two releases");
  r.check(present(0, h) && present(1, h), "blob purged before the boundary");
  auto underflow = api[0].commit(make_cas_ref(d.clients[0], "release", h, d.now()));
  r.check(underflow.outcome == Outcome::Rejected, "release below zero not rejected");

  d.stage(1);
  r.check(!present(0, h) && !present(1, h), "blob survived the first boundary after reaching zero");
  r.check(!refcount(0, h) && !refcount(1, h), "reference entry survived the boundary");
  auto snap = api[1].snapshot(1);
  bool in_snapshot = false;
  for (const auto& c : snap.contracts)
    if (c.descriptor.contract_id == cas_id && c.store.count(cas::blob_key(h))) in_snapshot = true;
  r.check(!in_snapshot, "purged blob still in snapshot 1");
  r.detail << (r.pass ? "" : " | ")
           << "2 cells over HTTP: put/get on both, refcount 2 after duplicate put, 0 after two releases, present "
              "until stage 1, purged from state and snapshot at stage 1";
}

// ---------------------------------------------------------------------------

void stage_buffering(Result& r) {
  constexpr std::size_t kCells = 2;
  auto d = deploy(kCells, 8, 100000);
  const std::size_t last = kCells - 1;  // staged last, so every peer has already reopened
  std::mt19937_64 rng(11);
  const auto fm = d.fm();

  std::vector<Envelope> plan;
  std::vector<Receipt> receipts;
  std::vector<std::thread> threads;
  std::mutex m;
  bool sequencing_failed = false;
  d.net->cell(last).set_stage_hook([&] {
    for (std::size_t k = 0; k < plan.size(); ++k) {
      threads.emplace_back([&, k] {
        auto rc = d.net->submit(last, plan[k]);
        std::lock_guard lock(m);
        receipts[k] = std::move(rc);
      });
      auto deadline = std::chrono::steady_clock::now() + 5s;
      while (d.net->cell(last).queue_depth(fm) < k + 1) {
        if (std::chrono::steady_clock::now() > deadline) {
          sequencing_failed = true;
          return;
        }
        std::this_thread::sleep_for(100us);
      }
    }
  });

  constexpr std::int64_t kCrossings = 50;
  std::size_t held = 0;
  for (std::int64_t c = 0; c < kCrossings; ++c) {
    for (int k = 0, n = static_cast<int>(rng() % 4); k < n; ++k)
      d.net->submit(rng() % kCells, make_transfer(d.clients[rng() % 8], d.clients[rng() % 8].address, 1, d.now()));
    plan.clear();
    receipts.assign(1 + rng() % 6, Receipt{});
    d.net->settle();
    auto at = deadline_of_cycle(c, d.inv());
    for (std::size_t k = 0; k < receipts.size(); ++k)
      plan.push_back(make_transfer(d.clients[rng() % 8], d.clients[rng() % 8].address, 1 + rng() % 9, at));
    d.stage(c);
    for (auto& t : threads) t.join();
    threads.clear();
    held += plan.size();
    r.check(!sequencing_failed, "a held transaction never reached the queue");
    r.check(d.net->settle(), "cells did not settle");

    for (std::size_t k = 0; k < plan.size(); ++k)
      r.check(receipts[k].outcome == Outcome::Accepted, "held transaction not accepted at crossing " +
                                                            std::to_string(c));
    for (std::size_t i = 0; i < kCells; ++i) {
      auto& cell = d.net->cell(i);
      auto snap_end = cell.archive(c)->snapshot.last_seq;
      std::uint64_t prev_seq = 0;
      for (std::size_t k = 0; k < plan.size(); ++k) {
        auto e = cell.ledger().find(plan[k].payload.sender, plan[k].payload.nonce);
        if (!e) {
          r.check(false, "held transaction lost on cell " + std::to_string(i));
          continue;
        }
        r.check(e->seq > snap_end && e->cycle == c + 1, "held transaction landed in the closing snapshot");
        r.check(k == 0 || e->seq == prev_seq + 1, "held transactions reordered on cell " + std::to_string(i));
        prev_seq = e->seq;
      }
      r.check(cell.archive(c)->snapshot.combined == d.net->cell(0).archive(c)->snapshot.combined,
              "cells disagree on snapshot " + std::to_string(c));
    }
    if (!r.pass) break;
  }
  std::uint64_t supply = fastmoney::total_supply(d.net->cell(0).runtime().store_copy(fm));
  r.check(supply == 8 * 100000, "money supply changed");
  r.detail << (r.pass ? "" : " | ") << kCrossings << " stage crossings, " << held
           << " transactions held during fingerprinting, all executed after the snapshot in arrival order on every "
              "cell";
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    void (*run)(Result&);
  };
  const std::vector<Criterion> criteria{
      {1, "fee table", fee_table},
      {2, "double spend", double_spend},
      {3, "one honest cell", fault_tolerance},
      {4, "write-once reports", write_once},
      {5, "audit succession", succession},
      {6, "censorship escape", censorship},
      {7, "deterministic replay", determinism},
      {8, "latency scaling", scaling},
      {9, "message size", message_size},
      {10, "CAS lifecycle", cas_end_to_end},
      {11, "stage buffering", stage_buffering},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && !only.count(c.id)) continue;
    Result r;
    auto start = std::chrono::steady_clock::now();
    try {
      c.run(r);
    } catch (const std::exception& e) {
      r.check(false, std::string("exception: ") + e.what());
    }
    if (!r.pass) ++failed;
    std::cout << "criterion " << c.id << " " << c.name << ": " << (r.pass ? "PASS" : "FAIL") << " ("
              << fixed(seconds_since(start), 1) << " s) " << r.detail.str() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
