#pragma once

// Client-driven QSC over full-spread TLCB on passive write-once stores.
// A client runs one driver thread per store; drivers share a cache of
// values read back from the stores and wait on it for t_r columns.

#include <chrono>
#include <condition_variable>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <thread>

#include "qsc/core_types.hpp"
#include "qsc/kvstore.hpp"
#include "qsc/message_set.hpp"
#include "qsc/qsc.hpp"
#include "qsc/tlcb.hpp"
#include "qsc/tsb.hpp"

namespace qsc {

// Drivers of a client made no progress within the watchdog period.
class QscodStall : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct QscodConfig {
  std::size_t n = 3;
  std::size_t t_r = 2;
  std::size_t t_s = 2;
  std::size_t t_b = 1;
  std::size_t f = 1;
};

// Zero thresholds take defaults: f = max(1, (n-1)/3) for n >= 3,
// t_r = n-f, t_s = f+1. The result must be a full-spread TLCB configuration.
inline QscodConfig qscod_configure(std::size_t n, std::size_t t_r = 0, std::size_t t_s = 0) {
  if (n == 0) throw ConfigError({"n must be positive"});
  QscodConfig c;
  c.n = n;
  const std::size_t f = n >= 3 ? std::max<std::size_t>(1, (n - 1) / 3) : 0;
  c.t_r = t_r ? t_r : n - f;
  c.f = c.t_r <= n ? n - c.t_r : 0;
  c.t_s = t_s ? t_s : std::min(c.f + 1, c.t_r);
  c.t_b = 1;
  if (c.t_r > 0 && c.t_r <= n && c.t_s > 0 && c.t_s <= c.t_r) {
    std::size_t d = c.t_r - c.t_s + 1, num = c.t_r * (n - c.t_r);
    std::size_t ceil_fb = (num + d - 1) / d;
    c.t_b = n > ceil_fb ? n - ceil_fb : 0;
  }
  tlcb_check_config(n, c.t_r, c.t_s, c.t_b, c.f, true);
  return c;
}

// ---- stored values ----

struct Slot1 {  // <h, h'>
  History prior;
  History proposal;
};
struct Slot3 {  // <R1, B1, h''>
  MessageSet R;
  MessageSet B;
  History best;
};

inline Bytes encode_slot1(const Slot1& v) {
  ByteWriter w;
  w.blob(v.prior.encode());
  w.blob(v.proposal.encode());
  return std::move(w).take();
}
inline Slot1 decode_slot1(ByteSpan b) {
  ByteReader r(b);
  Slot1 v;
  v.prior = History::decode(r.blob());
  v.proposal = History::decode(r.blob());
  r.expect_done();
  if (v.proposal.empty() || v.proposal.head().prev != v.prior.digest())
    throw DecodeError("slot 1 proposal does not extend its prior history");
  return v;
}
inline Bytes encode_slot3(const Slot3& v) {
  ByteWriter w;
  v.R.encode_to(w);
  v.B.encode_to(w);
  w.blob(v.best.encode());
  return std::move(w).take();
}
inline Slot3 decode_slot3(ByteSpan b) {
  ByteReader r(b);
  Slot3 v;
  v.R = MessageSet::decode_from(r);
  v.B = MessageSet::decode_from(r);
  v.best = History::decode(r.blob());
  r.expect_done();
  return v;
}

inline std::vector<History> histories_of(const MessageSet& set, ChainArchive* archive = nullptr) {
  std::vector<History> out;
  out.reserve(set.size());
  for (const auto& e : set) {
    auto h = History::decode(e.message.bytes());
    if (h.empty()) throw ProtocolViolation("genesis history in a stored set");
    if (archive) archive->add(h);
    insert_unique(out, h);
  }
  return out;
}

// C_{j,k}: values read back from store j (1-based) under key k, shared by a
// client's drivers.
class ClientCache {
 public:
  explicit ClientCache(std::size_t n) : n_(n) {}

  void put(NodeId j, const Key& k, Bytes v) {
    {
      std::lock_guard lock(mu_);
      auto& row = rows_[k];
      if (row.empty()) row.resize(n_);
      auto& cell = row.at(j.value - 1);
      if (cell) {
        if (*cell != v) throw ProtocolViolation("store " + std::to_string(j.value) + " changed its value at " + k.str());
        return;
      }
      cell = std::move(v);
      ++counts_[k];
    }
    cv_.notify_all();
  }

  std::optional<Bytes> get(NodeId j, const Key& k) const {
    std::lock_guard lock(mu_);
    auto it = rows_.find(k);
    if (it == rows_.end()) return std::nullopt;
    return it->second.at(j.value - 1);
  }

  // Blocks until at least t columns hold a value for k, then returns all
  // columns present at that moment.
  std::vector<std::pair<NodeId, Bytes>> wait(const Key& k, std::size_t t, std::chrono::milliseconds watchdog) {
    std::unique_lock lock(mu_);
    auto ready = [&] { return aborted_ || counts_[k] >= t; };
    if (!cv_.wait_for(lock, watchdog, ready))
      throw QscodStall("waited " + std::to_string(watchdog.count()) + "ms for " + std::to_string(t) +
                       " columns at " + k.str() + ", have " + std::to_string(counts_[k]));
    if (aborted_) throw QscodStall(abort_reason_);
    std::vector<std::pair<NodeId, Bytes>> out;
    const auto& row = rows_[k];
    for (std::size_t j = 0; j < row.size(); ++j)
      if (row[j]) out.emplace_back(NodeId{static_cast<std::uint32_t>(j + 1)}, *row[j]);
    return out;
  }

  void abort(std::string why) {
    {
      std::lock_guard lock(mu_);
      if (aborted_) return;
      aborted_ = true;
      abort_reason_ = std::move(why);
    }
    cv_.notify_all();
  }

 private:
  std::size_t n_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<Key, std::vector<std::optional<Bytes>>> rows_;
  std::map<Key, std::size_t> counts_;
  bool aborted_ = false;
  std::string abort_reason_;
};

struct QscodOptions {
  std::uint32_t client = 0;  // proposer identity of this client
  std::uint64_t seed = 0;
  bool backoff = true;
  unsigned backoff_cap = 6;          // at most 2^cap - 1 rounds of waiting
  std::uint64_t max_round = 0;       // 0: stop once every submitted message is committed
  std::optional<Key> halt_after;     // stop all drivers right after writing this key
  std::chrono::milliseconds watchdog{30000};
  unsigned io_retries = 6;
  std::chrono::milliseconds io_backoff{1};
};

// One driver's view of one round.
struct QscodRound {
  std::uint32_t client = 0;
  NodeId node;
  std::uint64_t round = 0;
  History result;  // tentative h after the round
  bool delivered = false;
};

struct QscodDelivery {
  std::uint32_t client = 0;
  std::uint64_t round = 0;
  History history;
  std::uint64_t seq = 0;  // index of the submitted message
  bool yield = false;     // the round went to this client's empty priority-0 proposal
};

struct QscodStats {
  std::uint64_t last_round = 0;
  std::uint64_t commits = 0;      // submitted messages committed
  std::uint64_t duplicates = 0;   // later commits of an already committed message
  std::uint64_t lost_rounds = 0;  // rounds in which our message lost
  std::uint64_t store_ops = 0;
};

class QscodClient {
 public:
  QscodClient(QscodConfig cfg, std::vector<Store*> stores, QscodOptions opt = {},
              std::function<void(const QscodDelivery&)> deliver = {})
      : cfg_(cfg), stores_(std::move(stores)), opt_(opt), deliver_(std::move(deliver)), cache_(cfg.n),
        rng_(splitmix64(opt.seed ^ splitmix64(0x51c0d000ULL + opt.client))) {
    if (stores_.size() != cfg_.n)
      throw UsageError("need one store per node: " + std::to_string(stores_.size()) + " given, n=" + std::to_string(cfg_.n));
    for (auto* s : stores_)
      if (!s) throw UsageError("null store");
    if (opt_.max_round) stop_round_ = opt_.max_round;
  }

  void submit(Bytes m) {
    std::lock_guard lock(mu_);
    pending_.push_back({next_seq_++, std::move(m)});
  }

  // Runs all drivers to completion. Rethrows the first fatal driver error.
  void run() {
    {
      std::lock_guard lock(mu_);
      if (!opt_.max_round && pending_.empty()) return;
      live_ = cfg_.n;
    }
    std::vector<std::thread> threads;
    for (std::uint32_t i = 1; i <= cfg_.n; ++i) threads.emplace_back([this, i] { drive(NodeId{i}); });
    for (auto& t : threads) t.join();
    if (error_) std::rethrow_exception(error_);
  }

  const QscodConfig& config() const { return cfg_; }
  const std::vector<QscodRound>& rounds() const { return rounds_; }
  const std::vector<QscodDelivery>& deliveries() const { return deliveries_; }
  const ChainArchive& archive() const { return archive_; }
  const ClientCache& cache() const { return cache_; }
  QscodStats stats() const {
    std::lock_guard lock(mu_);
    return stats_;
  }
  std::size_t pending() const {
    std::lock_guard lock(mu_);
    return pending_.size();
  }

 private:
  struct Pending {
    std::uint64_t seq;
    Bytes message;
  };
  struct Assignment {
    Bytes message;
    Priority priority{0};  // 0 marks a yield proposal
    std::optional<std::uint64_t> seq;
    bool lost_counted = false;
  };
  struct Halt {};

  // What this client proposes in round q; all drivers get the same answer.
  std::optional<Assignment> begin_round(std::uint64_t q) {
    std::lock_guard lock(mu_);
    if (stop_round_ && q > stop_round_) return std::nullopt;
    if (halted_) return std::nullopt;
    max_started_ = std::max(max_started_, q);
    auto [it, fresh] = assigned_.try_emplace(q);
    if (fresh) {
      if (!pending_.empty() && q >= next_real_round_) {
        it->second.message = pending_.front().message;
        it->second.seq = pending_.front().seq;
        it->second.priority = Priority{std::max<std::uint64_t>(1, splitmix64(opt_.seed ^ splitmix64(opt_.client) ^ splitmix64(q)))};
      }
    }
    return it->second;
  }

  void end_round(NodeId i, std::uint64_t q, const History& h, bool final) {
    std::optional<QscodDelivery> out;
    {
      std::lock_guard lock(mu_);
      rounds_.push_back({opt_.client, i, q, h, final});
      stats_.last_round = std::max(stats_.last_round, q);
      auto& a = assigned_.at(q);
      if (final) {
        if (delivered_rounds_.insert(q).second) {
          QscodDelivery d{opt_.client, q, h, 0, !a.seq};
          if (a.seq) {
            d.seq = *a.seq;
            if (committed_.insert(*a.seq).second) {
              ++stats_.commits;
              std::erase_if(pending_, [&](const Pending& p) { return p.seq == *a.seq; });
              out = d;
            } else {
              ++stats_.duplicates;
            }
            losses_ = 0;
            next_real_round_ = 0;
          }
          deliveries_.push_back(d);
          if (!opt_.max_round && pending_.empty() && !stop_round_) stop_round_ = max_started_;
        }
      } else if (a.seq && !a.lost_counted && !delivered_rounds_.count(q)) {
        a.lost_counted = true;
        ++stats_.lost_rounds;
        ++losses_;
        if (opt_.backoff) {
          std::uint64_t span = 1ULL << std::min(losses_, opt_.backoff_cap);
          next_real_round_ = std::max(next_real_round_, q + 1 + rng_() % span);
        }
      }
    }
    if (out && deliver_) deliver_(*out);
  }

  Bytes io(NodeId i, const Key& k, const Bytes& v) {
    for (unsigned attempt = 0;; ++attempt) {
      try {
        auto got = stores_[i.value - 1]->write_read(k, v);
        {
          std::lock_guard lock(mu_);
          ++stats_.store_ops;
        }
        cache_.put(i, k, got);
        if (opt_.halt_after && k == *opt_.halt_after) {
          std::lock_guard lock(mu_);
          halted_ = true;
          throw Halt{};
        }
        return got;
      } catch (const StoreIoError&) {
        if (attempt + 1 >= opt_.io_retries) throw;
        std::this_thread::sleep_for(opt_.io_backoff * (1 << std::min(attempt, 10u)));
      }
    }
  }

  void drive(NodeId i) {
    try {
      drive_rounds(i);
    } catch (const Halt&) {
    } catch (const StoreIoError& e) {
      std::lock_guard lock(mu_);
      if (--live_ < cfg_.t_r && !error_) {
        std::string why = "only " + std::to_string(live_) + " stores reachable, need t_r=" + std::to_string(cfg_.t_r) +
                          "; last failure: " + e.what();
        error_ = std::make_exception_ptr(QscodStall(why));
        cache_.abort(why);
      }
      return;
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error_) error_ = std::current_exception();
      cache_.abort("driver " + std::to_string(i.value) + " failed");
      return;
    }
  }

  void drive_rounds(NodeId i) {
    const auto t_r = cfg_.t_r;
    History h;
    ChainArchive seen;
    for (std::uint64_t q = 2;; ++q) {
      auto a = begin_round(q);
      if (!a) break;
      const History hc = History::extend(h, Proposal{NodeId{opt_.client}, a->message, a->priority, h.digest()});

      auto s1 = decode_slot1(io(i, {q, 1}, encode_slot1({h, hc})));
      h = s1.prior;
      seen.add(s1.proposal);
      MessageSet R1p;
      for (auto& [j, v] : cache_.wait({q, 1}, t_r, opt_.watchdog))
        R1p.insert(j, Blob(decode_slot1(v).proposal.encode()));

      R1p = MessageSet::decode(io(i, {q, 2}, R1p.encode()));
      MessageSet R1 = R1p, B1, gossip;
      for (auto& [j, v] : cache_.wait({q, 2}, t_r, opt_.watchdog)) gossip.insert(j, Blob(std::move(v)));
      merge_gossip(gossip, cfg_.t_s, R1, &B1);
      auto B1h = histories_of(B1, &seen);
      if (B1h.empty()) throw ProtocolViolation("empty B1 in round " + std::to_string(q));

      auto s3 = decode_slot3(io(i, {q, 3}, encode_slot3({R1, B1, best_in(B1h)})));
      seen.add(s3.best);
      MessageSet R2p;
      for (auto& [j, v] : cache_.wait({q, 3}, t_r, opt_.watchdog))
        R2p.insert(j, Blob(decode_slot3(v).best.encode()));

      R2p = MessageSet::decode(io(i, {q, 4}, R2p.encode()));
      MessageSet R2 = R2p, B2;
      gossip = MessageSet{};
      for (auto& [j, v] : cache_.wait({q, 4}, t_r, opt_.watchdog)) gossip.insert(j, Blob(std::move(v)));
      merge_gossip(gossip, cfg_.t_s, R2, &B2);
      auto R2h = histories_of(R2, &seen);
      if (R2h.empty()) throw ProtocolViolation("empty R2 in round " + std::to_string(q));
      h = best_in(R2h);

      const auto R1h = histories_of(s3.R, &seen);
      const auto B2h = histories_of(B2, &seen);
      const bool final = h == hc && contains(B2h, h) && uniquely_best_in(h, R1h);
      {
        std::lock_guard lock(mu_);
        archive_.merge(seen);
      }
      seen = ChainArchive{};
      end_round(i, q, h, final);
    }
  }

  QscodConfig cfg_;
  std::vector<Store*> stores_;
  QscodOptions opt_;
  std::function<void(const QscodDelivery&)> deliver_;
  ClientCache cache_;

  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  std::deque<Pending> pending_;
  std::uint64_t next_seq_ = 0;
  std::map<std::uint64_t, Assignment> assigned_;
  std::set<std::uint64_t> delivered_rounds_;
  std::set<std::uint64_t> committed_;
  std::uint64_t stop_round_ = 0;
  std::uint64_t max_started_ = 0;
  std::uint64_t next_real_round_ = 0;
  unsigned losses_ = 0;
  bool halted_ = false;
  std::size_t live_ = 0;
  std::exception_ptr error_;
  std::vector<QscodRound> rounds_;
  std::vector<QscodDelivery> deliveries_;
  QscodStats stats_;
  ChainArchive archive_;
};

// Cross-client checks: delivered histories are prefix-ordered, each
// committed round has a single winner, and every driver that finished a
// committed round holds the delivered history.
inline ValidationReport qscod_check(const std::vector<const QscodClient*>& clients) {
  ValidationReport rep;
  ChainArchive archive;
  std::vector<const QscodDelivery*> all;
  std::map<std::uint64_t, const QscodDelivery*> winner;
  for (const auto* c : clients) {
    archive.merge(c->archive());
    for (const auto& d : c->deliveries()) {
      all.push_back(&d);
      auto [it, fresh] = winner.emplace(d.round, &d);
      if (!fresh && !(it->second->history == d.history))
        rep.fail("round " + std::to_string(d.round) + ": clients " + std::to_string(it->second->client) + " and " +
                 std::to_string(d.client) + " delivered different histories");
    }
  }
  std::stable_sort(all.begin(), all.end(),
                   [](auto* a, auto* b) { return a->history.length() < b->history.length(); });
  for (std::size_t k = 1; k < all.size(); ++k)
    if (!is_prefix(all[k - 1]->history, all[k]->history, archive))
      rep.fail("deliveries diverge: client " + std::to_string(all[k - 1]->client) + " round " +
               std::to_string(all[k - 1]->round) + " vs client " + std::to_string(all[k]->client) + " round " +
               std::to_string(all[k]->round));
  for (const auto* c : clients)
    for (const auto& r : c->rounds()) {
      auto it = winner.find(r.round);
      if (it != winner.end() && !(r.result == it->second->history))
        rep.fail("round " + std::to_string(r.round) + ": client " + std::to_string(r.client) + " driver " +
                 std::to_string(r.node.value) + " ends with " + r.result.digest().short_hex() +
                 " but the round delivered " + it->second->history.digest().short_hex());
    }
  return rep;
}

// Per-node view of one round reconstructed from store contents alone.
struct StoreRoundView {
  NodeId node;
  std::optional<Slot1> s1;
  std::optional<MessageSet> s2;
  std::optional<Slot3> s3;
  std::optional<MessageSet> s4;
};

// Reads round q from every store and checks that each node's stored
// transitions are consistent with each other and with peer columns.
inline std::vector<StoreRoundView> replay_round(const std::vector<Store*>& stores, std::uint64_t q,
                                                std::size_t t_r, std::size_t t_s, ValidationReport* rep = nullptr) {
  std::vector<StoreRoundView> views;
  for (std::uint32_t i = 0; i < stores.size(); ++i) {
    StoreRoundView v{NodeId{i + 1}, {}, {}, {}, {}};
    if (auto b = stores[i]->read({q, 1})) v.s1 = decode_slot1(*b);
    if (auto b = stores[i]->read({q, 2})) v.s2 = MessageSet::decode(*b);
    if (auto b = stores[i]->read({q, 3})) v.s3 = decode_slot3(*b);
    if (auto b = stores[i]->read({q, 4})) v.s4 = MessageSet::decode(*b);
    views.push_back(std::move(v));
  }
  if (!rep) return views;
  auto bad = [&](NodeId i, const std::string& what) {
    rep->fail("round " + std::to_string(q) + " node " + std::to_string(i.value) + ": " + what);
  };
  for (const auto& v : views) {
    if (v.s2) {
      if (v.s2->size() < t_r) bad(v.node, "R1' below t_r");
      for (const auto& e : *v.s2) {
        const auto& peer = views.at(e.sender.value - 1).s1;
        if (!peer || peer->proposal.encode() != e.message.bytes())
          bad(v.node, "R1' names a proposal not stored by node " + std::to_string(e.sender.value));
      }
    }
    if (v.s3) {
      if (v.s2 && !v.s2->subset_of(v.s3->R)) bad(v.node, "R1 does not include R1'");
      if (!v.s3->B.subset_of(v.s3->R)) bad(v.node, "B1 not within R1");
      auto B = histories_of(v.s3->B);
      if (B.empty() || !(best_in(B) == v.s3->best)) bad(v.node, "h'' is not best in B1");
      // B1 must be derivable from some t_r stored R1' columns.
      std::size_t cols = 0;
      MessageSet all_r;
      for (const auto& w : views)
        if (w.s2) {
          ++cols;
          try {
            all_r.merge(*w.s2);
          } catch (const ProtocolViolation& e) {
            bad(w.node, e.what());
          }
        }
      if (cols >= t_r && !v.s3->R.subset_of(all_r)) bad(v.node, "R1 holds entries no node received");
      for (const auto& e : v.s3->B) {
        std::size_t hits = 0;
        for (const auto& w : views)
          if (w.s2 && w.s2->contains(e)) ++hits;
        if (hits < t_s) bad(v.node, "B1 entry spread to fewer than t_s stored R1' sets");
      }
    }
    if (v.s4) {
      if (v.s4->size() < t_r) bad(v.node, "R2' below t_r");
      for (const auto& e : *v.s4) {
        const auto& peer = views.at(e.sender.value - 1).s3;
        if (!peer || peer->best.encode() != e.message.bytes())
          bad(v.node, "R2' names an h'' not stored by node " + std::to_string(e.sender.value));
      }
    }
  }
  return views;
}

inline Bytes encode_views(const std::vector<StoreRoundView>& views) {
  ByteWriter w;
  for (const auto& v : views) {
    w.u32(v.node.value);
    w.u8(static_cast<std::uint8_t>((v.s1 ? 1 : 0) | (v.s2 ? 2 : 0) | (v.s3 ? 4 : 0) | (v.s4 ? 8 : 0)));
    if (v.s1) w.blob(encode_slot1(*v.s1));
    if (v.s2) v.s2->encode_to(w);
    if (v.s3) w.blob(encode_slot3(*v.s3));
    if (v.s4) v.s4->encode_to(w);
  }
  return std::move(w).take();
}

}  // namespace qsc
