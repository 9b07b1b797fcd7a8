#pragma once

// Proposals, hash-chained histories and the priority rules that QSC's
// choices and finality checks are built on.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <unordered_map>
#include <vector>

#include "qsc/bytes.hpp"
#include "qsc/digest.hpp"
#include "qsc/errors.hpp"

namespace qsc {

// 1-based member index within a group of n nodes.
struct NodeId {
  std::uint32_t value = 0;

  friend auto operator<=>(const NodeId&, const NodeId&) = default;
};

inline std::ostream& operator<<(std::ostream& os, NodeId id) { return os << id.value; }

// Logical time-step counter. Steps start at 1.
using Step = std::uint64_t;

// Uniform 64-bit random priority. Ties are legal and must be handled.
struct Priority {
  std::uint64_t value = 0;

  friend auto operator<=>(const Priority&, const Priority&) = default;
};

// One log entry: <proposer, message, priority> linked to its predecessor.
struct Proposal {
  NodeId proposer;
  Bytes message;
  Priority priority;
  Digest prev;  // zero iff this is the first entry of a chain

  // prev(32) || proposer u32 BE || priority u64 BE || u32 BE length || message
  Bytes canonical_bytes() const {
    ByteWriter w(32 + 4 + 8 + 4 + message.size());
    w.raw(prev.bytes);
    w.u32(proposer.value);
    w.u64(priority.value);
    w.blob(message);
    return std::move(w).take();
  }

  Digest digest() const { return Digest::of(canonical_bytes()); }

  static Proposal decode(ByteReader& r) {
    Proposal p;
    auto prev = r.raw(32);
    std::copy(prev.begin(), prev.end(), p.prev.bytes.begin());
    p.proposer.value = r.u32();
    p.priority.value = r.u64();
    auto m = r.blob();
    p.message.assign(m.begin(), m.end());
    return p;
  }

  friend bool operator==(const Proposal&, const Proposal&) = default;
};

// A history is carried by its head only; the predecessors are reachable
// through the prev digests (see ChainArchive). The empty history is the
// genesis predecessor and has no priority.
class History {
 public:
  History() = default;

  static History genesis() { return History{}; }

  // h ++ [p]; p.prev must already name h.
  static History extend(const History& h, Proposal p) {
    if (p.prev != h.digest()) throw UsageError("proposal does not link to the history it extends");
    History out;
    out.digest_ = p.digest();
    out.length_ = h.length_ + 1;
    out.head_ = std::make_shared<const Proposal>(std::move(p));
    return out;
  }

  // Rebuild from a head proposal and a known chain length.
  static History from_head(Proposal head, std::uint64_t length) {
    if (length == 0) throw DecodeError("nonempty head with zero length");
    if ((length == 1) != head.prev.is_zero()) throw DecodeError("head prev does not match chain length");
    History out;
    out.digest_ = head.digest();
    out.length_ = length;
    out.head_ = std::make_shared<const Proposal>(std::move(head));
    return out;
  }

  // Archive lookup: the digest is the key the head was stored under.
  static History from_stored(std::shared_ptr<const Proposal> head, std::uint64_t length, const Digest& digest) {
    History out;
    out.digest_ = digest;
    out.length_ = length;
    out.head_ = std::move(head);
    return out;
  }

  bool empty() const { return length_ == 0; }
  std::uint64_t length() const { return length_; }
  const Digest& digest() const { return digest_; }
  const Proposal& head() const {
    if (!head_) throw UsageError("genesis history has no head");
    return *head_;
  }
  std::shared_ptr<const Proposal> head_ptr() const { return head_; }

  // u64 BE length || canonical head bytes (nothing more for genesis)
  Bytes encode() const {
    ByteWriter w;
    w.u64(length_);
    if (head_) w.raw(head_->canonical_bytes());
    return std::move(w).take();
  }

  static History decode(ByteSpan bytes) {
    ByteReader r(bytes);
    auto len = r.u64();
    if (len == 0) {
      r.expect_done();
      return genesis();
    }
    auto p = Proposal::decode(r);
    r.expect_done();
    return from_head(std::move(p), len);
  }

  // Equal digests are taken to mean equal histories.
  friend bool operator==(const History& a, const History& b) {
    return a.length_ == b.length_ && a.digest_ == b.digest_;
  }

 private:
  std::shared_ptr<const Proposal> head_;
  Digest digest_{};
  std::uint64_t length_ = 0;
};

inline Priority priority_of(const History& h) {
  if (h.empty()) throw UsageError("priority_of: genesis has no priority");
  return h.head().priority;
}

// Strict "better than" used by best_in: higher priority, then lower
// proposer id, then smaller digest.
inline bool outranks(const History& a, const History& b) {
  const auto& pa = a.head();
  const auto& pb = b.head();
  if (pa.priority != pb.priority) return pa.priority > pb.priority;
  if (pa.proposer != pb.proposer) return pa.proposer < pb.proposer;
  return a.digest() < b.digest();
}

// Any best history in H, chosen by the deterministic tie-break above.
inline const History& best_in(std::span<const History> H) {
  if (H.empty()) throw UsageError("best_in: empty history set");
  const History* best = nullptr;
  for (const auto& h : H) {
    if (h.empty()) throw UsageError("best_in: genesis is not a candidate");
    if (!best || outranks(h, *best)) best = &h;
  }
  return *best;
}

inline bool contains(std::span<const History> H, const History& h) {
  return std::any_of(H.begin(), H.end(), [&](const History& x) { return x == h; });
}

// h is in H and every other member has strictly lower priority.
inline bool uniquely_best_in(const History& h, std::span<const History> H) {
  if (h.empty() || !contains(H, h)) return false;
  const auto r = priority_of(h);
  for (const auto& x : H) {
    if (x == h) continue;
    if (x.empty()) continue;
    if (priority_of(x) >= r) return false;
  }
  return true;
}

// Deduplicated insertion for history sets.
inline void insert_unique(std::vector<History>& H, const History& h) {
  if (!contains(H, h)) H.push_back(h);
}

// Digest-indexed store of every proposal seen, used to walk chains.
class ChainArchive {
 public:
  void add(const History& h) {
    if (h.empty()) return;
    entries_.try_emplace(h.digest(), Entry{h.head_ptr(), h.length()});
  }

  void merge(const ChainArchive& o) {
    for (const auto& [d, e] : o.entries_) entries_.try_emplace(d, e);
  }

  bool knows(const Digest& d) const { return d.is_zero() || entries_.count(d) != 0; }

  // Predecessor of h, or nullopt when some link is missing from the archive.
  std::optional<History> parent(const History& h) const {
    if (h.empty()) throw UsageError("genesis has no parent");
    const auto& prev = h.head().prev;
    if (prev.is_zero()) return History::genesis();
    auto it = entries_.find(prev);
    if (it == entries_.end()) return std::nullopt;
    return History::from_stored(it->second.head, it->second.length, prev);
  }

  // Full chain, oldest first. Throws if a link is missing.
  std::vector<Proposal> materialize(const History& h) const {
    std::vector<Proposal> out;
    History cur = h;
    while (!cur.empty()) {
      out.push_back(cur.head());
      auto p = parent(cur);
      if (!p) throw UsageError("chain link missing from archive: " + cur.head().prev.short_hex());
      cur = *p;
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  std::size_t size() const { return entries_.size(); }

 private:
  struct Entry {
    std::shared_ptr<const Proposal> head;
    std::uint64_t length;
  };
  std::unordered_map<Digest, Entry, DigestHash> entries_;
};

// True iff walking prev links back from `longer` reaches `prefix`.
inline bool is_prefix(const History& prefix, const History& longer, const ChainArchive& archive) {
  if (prefix.empty()) return true;
  if (prefix.length() > longer.length()) return false;
  History cur = longer;
  while (cur.length() > prefix.length()) {
    auto p = archive.parent(cur);
    if (!p) throw UsageError("is_prefix: chain link missing from archive");
    cur = *p;
  }
  return cur == prefix;
}

}  // namespace qsc
