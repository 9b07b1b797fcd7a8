#pragma once

// Threshold synchronous broadcast contract: the (R, B) result type, the
// global observer's trace, and validators for the lock-step, threshold and
// spread guarantees.

#include <algorithm>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "qsc/core_types.hpp"
#include "qsc/message_set.hpp"
#include "qsc/step_message.hpp"

namespace qsc {

struct TsbResult {
  MessageSet R;
  MessageSet B;
};

struct TsbParams {
  std::size_t n = 0;
  std::size_t f = 0;
  std::size_t t_r = 0;
  std::size_t t_b = 0;
  std::size_t t_s = 0;
};

struct SetEntry {
  NodeId sender;
  Digest digest;

  friend auto operator<=>(const SetEntry&, const SetEntry&) = default;
};

inline std::vector<SetEntry> entries_of(const MessageSet& s) {
  std::vector<SetEntry> out;
  out.reserve(s.size());
  for (const auto& e : s) out.push_back({e.sender, e.message.digest()});
  return out;
}

// One Broadcast call as seen by the observer. `step` is the TSB-level step
// (k-th call); base_begin/base_end delimit the underlying clock steps.
struct CallRecord {
  std::uint64_t order = 0;
  NodeId node;
  Step step = 0;
  Digest sent;
  std::vector<SetEntry> R;
  std::vector<SetEntry> B;
  Step base_begin = 0;
  Step base_end = 0;
  bool ghost = false;  // returned after the node's crash point
};

struct BaseEvent {
  enum class Type : std::uint8_t { send, recv };
  Type type = Type::send;
  std::uint64_t id = 0;  // unicast id, shared by the send and its recv
  NodeId from;
  NodeId to;
  MsgKind kind = MsgKind::plain;
  Step step = 0;
  Digest payload;
};

struct CrashRecord {
  NodeId node;
  Step base_step = 0;
  std::uint64_t sends_in_step = 0;
};

struct ProposalRecord {
  NodeId node;
  std::uint64_t round = 0;
  Step step = 0;  // TSB step of the call that broadcast it
  History history;
  bool ghost = false;
};

struct RoundRecord {
  NodeId node;
  std::uint64_t round = 0;
  Step start_step = 0;
  History initial;
  History result;
  bool delivered = false;
  bool ghost = false;
};

struct DeliveryRecord {
  NodeId node;
  Step step = 0;  // TSB step at which the delivering round ended (next call's step)
  History history;
  std::uint64_t round = 0;
};

struct RunTrace {
  std::size_t n = 0;
  std::vector<CallRecord> calls;
  std::vector<BaseEvent> base;
  std::vector<CrashRecord> crashes;
  std::vector<ProposalRecord> proposals;
  std::vector<RoundRecord> rounds;
  std::vector<DeliveryRecord> deliveries;
  bool record_base = false;

  bool crashed(NodeId id) const {
    return std::any_of(crashes.begin(), crashes.end(), [&](const CrashRecord& c) { return c.node == id; });
  }
};

struct ValidationReport {
  bool ok = true;
  std::vector<std::string> problems;

  void fail(std::string p) {
    ok = false;
    if (problems.size() < 32) problems.push_back(std::move(p));
  }
  void absorb(const ValidationReport& other) {
    for (const auto& p : other.problems) fail(p);
    if (!other.ok) ok = false;
  }
  std::string summary() const {
    std::string s;
    for (const auto& p : problems) s += p + "\n";
    return s;
  }
};

namespace detail {

inline std::string where(const CallRecord& c) {
  return "node " + std::to_string(c.node.value) + " step " + std::to_string(c.step);
}

inline std::map<std::pair<NodeId, Step>, Digest> sent_index(const RunTrace& t) {
  std::map<std::pair<NodeId, Step>, Digest> sent;
  for (const auto& c : t.calls) sent.emplace(std::make_pair(c.node, c.step), c.sent);
  return sent;
}

}  // namespace detail

// Live nodes call Broadcast at steps 1, 2, 3, ... and every returned element
// is exactly what its sender broadcast at that same step.
inline ValidationReport validate_lockstep(const RunTrace& t) {
  ValidationReport rep;
  auto sent = detail::sent_index(t);
  std::map<NodeId, Step> last;
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    if (c.node.value < 1 || c.node.value > t.n) {
      rep.fail(detail::where(c) + ": node id out of range");
      continue;
    }
    Step expect = last[c.node] + 1;
    if (c.step != expect)
      rep.fail(detail::where(c) + ": expected step " + std::to_string(expect));
    last[c.node] = c.step;
    auto check = [&](const std::vector<SetEntry>& set, const char* name) {
      for (const auto& e : set) {
        auto it = sent.find({e.sender, c.step});
        if (it == sent.end() || it->second != e.digest)
          rep.fail(detail::where(c) + ": " + name + " entry from node " + std::to_string(e.sender.value) +
                   " was not sent at step " + std::to_string(c.step));
      }
    };
    check(c.R, "R");
    check(c.B, "B");
  }
  return rep;
}

// Receive and broadcast thresholds on every live return, and spread of every
// B element to at least t_s same-step receive sets. Returns of crashed nodes
// that kept receiving after their crash count toward spread.
inline ValidationReport validate_thresholds(const RunTrace& t, const TsbParams& p) {
  ValidationReport rep;
  std::map<Step, std::map<SetEntry, std::size_t>> reach;
  for (const auto& c : t.calls)
    for (const auto& e : c.R) ++reach[c.step][e];
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    if (c.R.size() < p.t_r)
      rep.fail(detail::where(c) + ": |R|=" + std::to_string(c.R.size()) + " < t_r=" + std::to_string(p.t_r));
    if (c.B.size() < p.t_b)
      rep.fail(detail::where(c) + ": |B|=" + std::to_string(c.B.size()) + " < t_b=" + std::to_string(p.t_b));
    for (const auto& e : c.B) {
      auto& at = reach[c.step];
      auto it = at.find(e);
      std::size_t count = it == at.end() ? 0 : it->second;
      if (count < p.t_s)
        rep.fail(detail::where(c) + ": B entry from node " + std::to_string(e.sender.value) + " reached " +
                 std::to_string(count) + " < t_s=" + std::to_string(p.t_s) + " receive sets");
    }
  }
  return rep;
}

// B_i is a subset of R_j for every pair of live same-step returns.
inline ValidationReport validate_fullspread(const RunTrace& t) {
  ValidationReport rep;
  std::map<Step, std::set<SetEntry>> b_union;
  for (const auto& c : t.calls)
    if (!c.ghost) b_union[c.step].insert(c.B.begin(), c.B.end());
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    for (const auto& e : b_union[c.step])
      if (!std::binary_search(c.R.begin(), c.R.end(), e))
        rep.fail(detail::where(c) + ": R misses broadcast-set entry from node " + std::to_string(e.sender.value));
  }
  return rep;
}

inline ValidationReport validate_b_subset_r(const RunTrace& t) {
  ValidationReport rep;
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    for (const auto& e : c.B)
      if (!std::binary_search(c.R.begin(), c.R.end(), e))
        rep.fail(detail::where(c) + ": B entry from node " + std::to_string(e.sender.value) + " not in R");
  }
  return rep;
}

// Each TSB call spans exactly `per_call` consecutive clock steps.
inline ValidationReport validate_base_steps(const RunTrace& t, Step per_call) {
  ValidationReport rep;
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    if (c.base_begin != (c.step - 1) * per_call + 1 || c.base_end != c.base_begin + per_call - 1)
      rep.fail(detail::where(c) + ": spans clock steps " + std::to_string(c.base_begin) + ".." +
               std::to_string(c.base_end));
  }
  return rep;
}

// |B| >= n - floor(t_r (n - t_r) / (t_r - t_s + 1)) on every live return.
inline ValidationReport validate_pigeonhole(const RunTrace& t, const TsbParams& p) {
  ValidationReport rep;
  if (p.t_s == 0 || p.t_s > p.t_r || p.t_r > p.n) {
    rep.fail("pigeonhole bound needs 0 < t_s <= t_r <= n");
    return rep;
  }
  std::size_t fb_floor = p.t_r * (p.n - p.t_r) / (p.t_r - p.t_s + 1);
  std::size_t bound = p.n > fb_floor ? p.n - fb_floor : 0;
  for (const auto& c : t.calls) {
    if (c.ghost) continue;
    if (c.B.size() < bound)
      rep.fail(detail::where(c) + ": |B|=" + std::to_string(c.B.size()) + " below bound " + std::to_string(bound));
  }
  return rep;
}

// Pairwise FIFO: per ordered pair, receive order equals send order.
inline ValidationReport validate_fifo(const RunTrace& t) {
  ValidationReport rep;
  std::map<std::pair<NodeId, NodeId>, std::vector<std::uint64_t>> sends, recvs;
  for (const auto& e : t.base) {
    auto key = std::make_pair(e.from, e.to);
    (e.type == BaseEvent::Type::send ? sends : recvs)[key].push_back(e.id);
  }
  for (const auto& [key, r] : recvs) {
    const auto& s = sends[key];
    if (r.size() > s.size() || !std::equal(r.begin(), r.end(), s.begin()))
      rep.fail("link " + std::to_string(key.first.value) + "->" + std::to_string(key.second.value) +
               ": delivery order differs from send order");
  }
  return rep;
}

// Every wit is preceded, in its sender's own event order, by receipt of at
// least t_s distinct acks for the same step and message.
inline ValidationReport validate_ack_precedence(const RunTrace& t, std::size_t t_s) {
  ValidationReport rep;
  std::map<NodeId, std::map<std::pair<Step, Digest>, std::set<NodeId>>> acks;
  std::set<std::pair<NodeId, Step>> checked;
  for (const auto& e : t.base) {
    if (e.type == BaseEvent::Type::recv && e.kind == MsgKind::ack) {
      acks[e.to][{e.step, e.payload}].insert(e.from);
    } else if (e.type == BaseEvent::Type::send && e.kind == MsgKind::wit) {
      if (!checked.insert({e.from, e.step}).second) continue;
      auto n = acks[e.from][{e.step, e.payload}].size();
      if (n < t_s)
        rep.fail("node " + std::to_string(e.from.value) + " step " + std::to_string(e.step) + ": wit after " +
                 std::to_string(n) + " < t_s=" + std::to_string(t_s) + " acks");
    }
  }
  return rep;
}

// Line-oriented dump: step,node,event,payload-digest
inline void write_trace(std::ostream& os, const RunTrace& t) {
  // Records of different kinds are emitted in their own recording order;
  // each category is individually deterministic.
  for (const auto& c : t.crashes) os << c.base_step << ',' << c.node << ",crash," << c.sends_in_step << '\n';
  for (const auto& c : t.calls) {
    const char* g = c.ghost ? "ghost." : "";
    os << c.step << ',' << c.node << ',' << g << "call," << c.sent.hex() << '\n';
    for (const auto& e : c.R) os << c.step << ',' << c.node << ',' << g << "ret.r." << e.sender << ',' << e.digest.hex() << '\n';
    for (const auto& e : c.B) os << c.step << ',' << c.node << ',' << g << "ret.b." << e.sender << ',' << e.digest.hex() << '\n';
    os << c.step << ',' << c.node << ',' << g << "ret," << c.base_begin << '-' << c.base_end << '\n';
  }
  for (const auto& p : t.proposals)
    os << p.step << ',' << p.node << ',' << (p.ghost ? "ghost." : "") << "propose," << p.history.digest().hex() << '\n';
  for (const auto& r : t.rounds)
    os << r.start_step << ',' << r.node << ',' << (r.ghost ? "ghost." : "") << "adopt," << r.result.digest().hex()
       << '\n';
  for (const auto& d : t.deliveries) os << d.step << ',' << d.node << ",deliver," << d.history.digest().hex() << '\n';
  for (const auto& e : t.base) {
    if (e.type == BaseEvent::Type::send)
      os << e.step << ',' << e.from << ",send." << e.to << '.' << kind_name(e.kind) << ',' << e.payload.hex() << '\n';
    else
      os << e.step << ',' << e.to << ",recv." << e.from << '.' << kind_name(e.kind) << ',' << e.payload.hex() << '\n';
  }
}

inline std::string trace_string(const RunTrace& t) {
  std::ostringstream os;
  write_trace(os, t);
  return os.str();
}

}  // namespace qsc
