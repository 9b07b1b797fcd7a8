#pragma once

// Consensus-level checks over a RunTrace: consistency of deliveries,
// agreement on delivery, history preservation, validity delay, and the
// empirical commit rate.

#include <cmath>
#include <map>

#include "qsc/core_types.hpp"
#include "qsc/tsb.hpp"

namespace qsc {

inline ChainArchive archive_of(const RunTrace& t) {
  ChainArchive a;
  for (const auto& p : t.proposals) a.add(p.history);
  return a;
}

// All delivered histories are totally ordered by the prefix relation.
// Small sets are compared pairwise; large ones are sorted by length and
// checked as a single chain, which is equivalent by transitivity.
inline ValidationReport check_consistency(const RunTrace& t, std::size_t pairwise_limit = 200) {
  ValidationReport rep;
  auto archive = archive_of(t);
  std::vector<const DeliveryRecord*> d;
  for (const auto& r : t.deliveries) d.push_back(&r);
  auto related = [&](const History& a, const History& b) {
    return a.length() <= b.length() ? is_prefix(a, b, archive) : is_prefix(b, a, archive);
  };
  auto fail = [&](const DeliveryRecord& a, const DeliveryRecord& b) {
    rep.fail("deliveries diverge: node " + std::to_string(a.node.value) + " step " + std::to_string(a.step) + " (" +
             a.history.digest().short_hex() + ") vs node " + std::to_string(b.node.value) + " step " +
             std::to_string(b.step) + " (" + b.history.digest().short_hex() + ")");
  };
  if (d.size() <= pairwise_limit) {
    for (std::size_t i = 0; i < d.size(); ++i)
      for (std::size_t j = i + 1; j < d.size(); ++j)
        if (!related(d[i]->history, d[j]->history)) fail(*d[i], *d[j]);
    return rep;
  }
  std::stable_sort(d.begin(), d.end(),
                   [](auto* a, auto* b) { return a->history.length() < b->history.length(); });
  for (std::size_t i = 1; i < d.size(); ++i)
    if (!is_prefix(d[i - 1]->history, d[i]->history, archive)) fail(*d[i - 1], *d[i]);
  return rep;
}

// If a live node delivers at the end of round q, every live node ends
// round q holding that same history.
inline ValidationReport check_agreement(const RunTrace& t) {
  ValidationReport rep;
  std::map<std::uint64_t, std::vector<const RoundRecord*>> by_round;
  for (const auto& r : t.rounds)
    if (!r.ghost) by_round[r.round].push_back(&r);
  for (const auto& [q, rs] : by_round) {
    for (const auto* d : rs) {
      if (!d->delivered) continue;
      for (const auto* o : rs)
        if (!(o->result == d->result))
          rep.fail("round " + std::to_string(q) + ": node " + std::to_string(d->node.value) + " delivered " +
                   d->result.digest().short_hex() + " but node " + std::to_string(o->node.value) + " holds " +
                   o->result.digest().short_hex());
    }
  }
  return rep;
}

// Every live node's round-q starting history has some node's round-(q-1)
// starting history as a strict prefix. Earlier rounds follow inductively.
// A proposer's starting history is recovered from its proposal, so nodes
// that crashed mid-round still count.
inline ValidationReport check_preservation(const RunTrace& t) {
  ValidationReport rep;
  auto archive = archive_of(t);
  std::map<std::uint64_t, std::vector<History>> starts;
  for (const auto& p : t.proposals) {
    auto parent = archive.parent(p.history);
    if (parent) insert_unique(starts[p.round], *parent);
  }
  for (const auto& r : t.rounds) {
    if (r.ghost || r.round < 2) continue;
    bool found = false;
    for (const auto& s : starts[r.round - 1])
      if (s.length() < r.initial.length() && is_prefix(s, r.initial, archive)) {
        found = true;
        break;
      }
    if (!found)
      rep.fail("round " + std::to_string(r.round) + ": node " + std::to_string(r.node.value) +
               " starts from a history extending no round-" + std::to_string(r.round - 1) + " history");
  }
  return rep;
}

// Each delivered head was proposed exactly delta TSB steps before delivery.
inline ValidationReport check_validity(const RunTrace& t, Step delta = 2) {
  ValidationReport rep;
  std::map<Digest, const ProposalRecord*> proposed;
  for (const auto& p : t.proposals) proposed.emplace(p.history.digest(), &p);
  for (const auto& d : t.deliveries) {
    auto it = proposed.find(d.history.digest());
    if (it == proposed.end()) {
      rep.fail("node " + std::to_string(d.node.value) + " delivered an unproposed history");
      continue;
    }
    if (it->second->step + delta != d.step)
      rep.fail("node " + std::to_string(d.node.value) + " delivered at step " + std::to_string(d.step) +
               " a head proposed at step " + std::to_string(it->second->step));
  }
  return rep;
}

struct CommitStats {
  std::uint64_t node_rounds = 0;  // live node-rounds
  std::uint64_t commits = 0;      // live deliveries

  double rate() const { return node_rounds ? static_cast<double>(commits) / static_cast<double>(node_rounds) : 0.0; }
  double rounds_per_commit() const {
    return commits ? static_cast<double>(node_rounds) / static_cast<double>(commits) : 0.0;
  }
  CommitStats& operator+=(const CommitStats& o) {
    node_rounds += o.node_rounds;
    commits += o.commits;
    return *this;
  }
};

inline CommitStats commit_stats(const RunTrace& t) {
  CommitStats s;
  for (const auto& r : t.rounds)
    if (!r.ghost) {
      ++s.node_rounds;
      if (r.delivered) ++s.commits;
    }
  return s;
}

// Lower acceptance bound for a Bernoulli rate: p - 3 standard errors at p.
inline double rate_floor(double p, std::uint64_t trials) {
  if (trials == 0) return 0.0;
  return p - 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(trials));
}

}  // namespace qsc
