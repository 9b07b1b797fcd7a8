#pragma once

// QSC consensus rounds over any full-spread broadcast layer.

#include <functional>
#include <optional>
#include <random>
#include <unordered_map>

#include "qsc/core_types.hpp"
#include "qsc/errors.hpp"
#include "qsc/task.hpp"
#include "qsc/tsb.hpp"

namespace qsc {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct QscHooks {
  // ChooseMessage; defaults to the empty message.
  std::function<Bytes(NodeId, std::uint64_t round)> choose;
  // Deliver; called synchronously after the finality check.
  std::function<void(const DeliveryRecord&)> deliver;
  // RandomValue; defaults to a per-node 64-bit generator seeded from the run seed.
  std::function<Priority(NodeId, std::uint64_t round)> random;
};

// Optional observer hookup: where to record, and whether the node is
// past its crash point (its records are then flagged and deliveries dropped).
struct QscObserver {
  RunTrace* trace = nullptr;
  std::function<bool()> ghost;
};

// Broadcast layer wrapper that records every call into a RunTrace.
template <class Layer>
class ObservedLayer {
 public:
  static constexpr Step steps_per_call = Layer::steps_per_call;

  ObservedLayer(Layer& inner, RunTrace* trace) : inner_(inner), trace_(trace) {}

  Task<TsbResult> broadcast(Blob m) {
    const Step k = ++calls_;
    const Step begin = inner_.clock().step() + 1;
    const Digest sent = m.digest();
    auto res = co_await inner_.broadcast(std::move(m));
    if (trace_) {
      CallRecord c;
      c.order = trace_->calls.size();
      c.node = inner_.clock().net().self();
      c.step = k;
      c.sent = sent;
      c.R = entries_of(res.R);
      c.B = entries_of(res.B);
      c.base_begin = begin;
      c.base_end = inner_.clock().step();
      c.ghost = inner_.clock().net().crashed();
      trace_->calls.push_back(std::move(c));
    }
    co_return res;
  }

  Step calls() const { return calls_; }
  Layer& inner() { return inner_; }

 private:
  Layer& inner_;
  RunTrace* trace_;
  Step calls_ = 0;
};

template <class Layer>
class QscNode {
 public:
  QscNode(NodeId id, Layer& layer, std::uint64_t seed, QscHooks hooks = {}, QscObserver obs = {})
      : id_(id), layer_(layer), rng_(splitmix64(seed ^ splitmix64(id.value))), hooks_(std::move(hooks)),
        obs_(std::move(obs)) {}

  NodeId id() const { return id_; }
  const History& history() const { return h_; }
  std::uint64_t round_number() const { return q_; }
  const ChainArchive& archive() const { return archive_; }

  // One consensus round: propose, pick the best confirmed history,
  // re-broadcast it, adopt the best seen, and deliver if final.
  Task<std::optional<History>> round() {
    ++q_;
    cache_.clear();
    const Step s1 = 2 * q_ - 1;
    const History initial = h_;
    Bytes m = hooks_.choose ? hooks_.choose(id_, q_) : Bytes{};
    Priority r = hooks_.random ? hooks_.random(id_, q_) : Priority{rng_()};
    History h1 = History::extend(h_, Proposal{id_, std::move(m), r, h_.digest()});
    archive_.add(h1);
    if (obs_.trace) obs_.trace->proposals.push_back({id_, q_, s1, h1, ghost()});

    auto first = co_await layer_.broadcast(Blob(h1.encode()));
    auto B1 = decode(first.B);
    if (B1.empty()) throw ProtocolViolation("empty broadcast set from first call of round " + std::to_string(q_));
    History h2 = best_in(B1);

    auto second = co_await layer_.broadcast(Blob(h2.encode()));
    auto R2 = decode(second.R);
    if (R2.empty()) throw ProtocolViolation("empty receive set from second call of round " + std::to_string(q_));
    h_ = best_in(R2);

    auto R1 = decode(first.R);
    auto B2 = decode(second.B);
    const bool final = contains(B2, h_) && uniquely_best_in(h_, R1);
    const bool g = ghost();
    if (obs_.trace) obs_.trace->rounds.push_back({id_, q_, s1, initial, h_, final, g});
    if (!final) co_return std::nullopt;
    DeliveryRecord d{id_, s1 + 2, h_, q_};
    if (!g) {
      if (obs_.trace) obs_.trace->deliveries.push_back(d);
      if (hooks_.deliver) hooks_.deliver(d);
    }
    co_return h_;
  }

  Task<std::vector<DeliveryRecord>> run(std::uint64_t rounds) {
    std::vector<DeliveryRecord> out;
    for (std::uint64_t k = 0; k < rounds; ++k) {
      auto d = co_await round();
      if (d && !ghost()) out.push_back({id_, 2 * q_ + 1, *d, q_});
    }
    co_return out;
  }

 private:
  bool ghost() const { return obs_.ghost && obs_.ghost(); }

  std::vector<History> decode(const MessageSet& set) {
    std::vector<History> out;
    out.reserve(set.size());
    for (const auto& e : set) {
      auto it = cache_.find(e.message.digest());
      if (it == cache_.end()) {
        auto h = History::decode(e.message.bytes());
        if (h.empty()) throw ProtocolViolation("genesis history broadcast by node " + std::to_string(e.sender.value));
        archive_.add(h);
        it = cache_.emplace(e.message.digest(), std::move(h)).first;
      }
      insert_unique(out, it->second);
    }
    return out;
  }

  NodeId id_;
  Layer& layer_;
  std::mt19937_64 rng_;
  QscHooks hooks_;
  QscObserver obs_;
  History h_;
  std::uint64_t q_ = 0;
  std::unordered_map<Digest, History, DigestHash> cache_;
  ChainArchive archive_;
};

}  // namespace qsc
