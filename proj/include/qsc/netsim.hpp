#pragma once

// Deterministic discrete-event network simulator. Nodes are coroutines
// cooperatively resumed by a single-threaded event loop; links are
// pairwise FIFO with finite delays chosen without looking at payloads.

#include <cmath>
#include <coroutine>
#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <queue>
#include <sstream>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "qsc/clock.hpp"
#include "qsc/errors.hpp"
#include "qsc/qsc.hpp"
#include "qsc/qsc_checks.hpp"
#include "qsc/task.hpp"
#include "qsc/tlcb.hpp"
#include "qsc/tlcf.hpp"
#include "qsc/tlcr.hpp"
#include "qsc/tlcw.hpp"
#include "qsc/tsb.hpp"

namespace qsc::sim {

namespace detail {

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    auto pos = s.find(sep, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::uint64_t parse_u64(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos)
    throw UsageError(std::string("bad ") + what + ": '" + s + "'");
  return std::stoull(s);
}

inline double parse_double(const std::string& s, const char* what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used == 0 || used != s.size() || !(v > 0)) throw UsageError(std::string("bad ") + what + ": '" + s + "'");
  return v;
}

// Uniform in (0, 1].
inline double unit(std::uint64_t x) { return (static_cast<double>(x >> 11) + 1.0) * (1.0 / 9007199254740992.0); }

inline std::uint64_t mix(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return splitmix64(splitmix64(splitmix64(seed ^ 0x5bd1e995ULL) ^ a) ^ (b << 32 | c));
}

}  // namespace detail

enum class DelayKind { fixed, geometric, heavy, adversarial };

// Link delay distribution. Delays are integer time units >= 1.
//   fixed:D             every message takes D
//   geometric:M         geometric with mean M
//   heavy:M             Pareto (alpha 1.5) scaled to mean M, capped at 50 M
//   adversarial:K:D     K target nodes, redrawn every n*n sends; within a
//                       window each link out of a target is either held
//                       for D or fast, splitting the targets' audience;
//                       other links are geometric with mean 2
struct DelayPolicy {
  DelayKind kind = DelayKind::geometric;
  double mean = 3.0;
  std::uint64_t targets = 1;
  std::uint64_t max_delay = 40;

  static DelayPolicy parse(std::string_view text) {
    auto parts = detail::split(text, ':');
    DelayPolicy p;
    const auto& name = parts[0];
    if (name == "fixed" && parts.size() <= 2) {
      p.kind = DelayKind::fixed;
      p.mean = parts.size() == 2 ? static_cast<double>(detail::parse_u64(parts[1], "fixed delay")) : 1.0;
      if (p.mean < 1) throw UsageError("fixed delay must be >= 1");
    } else if (name == "geometric" && parts.size() <= 2) {
      p.kind = DelayKind::geometric;
      if (parts.size() == 2) p.mean = detail::parse_double(parts[1], "geometric mean");
      if (p.mean < 1) throw UsageError("geometric mean must be >= 1");
    } else if (name == "heavy" && parts.size() <= 2) {
      p.kind = DelayKind::heavy;
      if (parts.size() == 2) p.mean = detail::parse_double(parts[1], "heavy-tail mean");
      if (p.mean < 1) throw UsageError("heavy-tail mean must be >= 1");
    } else if (name == "adversarial" && parts.size() <= 3) {
      p.kind = DelayKind::adversarial;
      p.mean = 2.0;
      if (parts.size() >= 2) p.targets = detail::parse_u64(parts[1], "adversarial target count");
      if (parts.size() == 3) p.max_delay = detail::parse_u64(parts[2], "adversarial max delay");
      if (p.max_delay < 1) throw UsageError("adversarial max delay must be >= 1");
    } else {
      throw UsageError("unknown delay policy '" + std::string(text) + "'");
    }
    return p;
  }

  std::string str() const {
    std::ostringstream os;
    switch (kind) {
      case DelayKind::fixed: os << "fixed:" << static_cast<std::uint64_t>(mean); break;
      case DelayKind::geometric: os << "geometric:" << mean; break;
      case DelayKind::heavy: os << "heavy:" << mean; break;
      case DelayKind::adversarial: os << "adversarial:" << targets << ':' << max_delay; break;
    }
    return os.str();
  }

  // Pure function of (seed, sender, receiver, send index). The payload is
  // deliberately not a parameter.
  std::uint64_t draw(std::uint64_t seed, NodeId from, NodeId to, std::uint64_t send_index, std::size_t n) const {
    const auto x = detail::mix(seed, send_index, from.value, to.value);
    switch (kind) {
      case DelayKind::fixed:
        return static_cast<std::uint64_t>(mean);
      case DelayKind::geometric:
        return geometric(x, mean);
      case DelayKind::heavy: {
        const double alpha = 1.5;
        const double xm = mean * (alpha - 1) / alpha;
        double d = xm / std::pow(detail::unit(x), 1.0 / alpha);
        d = std::min(d, 50.0 * mean);
        return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::ceil(d)));
      }
      case DelayKind::adversarial: {
        const std::uint64_t window = send_index / std::max<std::uint64_t>(1, n * n);
        if (is_target(seed, window, from, n) && (detail::mix(seed ^ 0x77ULL, window, from.value, to.value) & 1))
          return max_delay;
        return geometric(x, mean);
      }
    }
    return 1;
  }

  bool is_target(std::uint64_t seed, std::uint64_t window, NodeId node, std::size_t n) const {
    // Partial Fisher-Yates over 1..n keyed by (seed, window).
    std::vector<std::uint32_t> ids(n);
    for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<std::uint32_t>(i + 1);
    const std::size_t k = std::min<std::size_t>(targets, n);
    for (std::size_t i = 0; i < k; ++i) {
      auto r = detail::mix(seed ^ 0xad7e45a1ULL, window, i, 0) % (n - i);
      std::swap(ids[i], ids[i + r]);
      if (ids[i] == node.value) return true;
    }
    return false;
  }

 private:
  static std::uint64_t geometric(std::uint64_t x, double m) {
    if (m <= 1.0) return 1;
    const double p = 1.0 / m;
    return 1 + static_cast<std::uint64_t>(std::floor(std::log(detail::unit(x)) / std::log1p(-p)));
  }
};

// Permanent stop: at the start of clock step `step`, or after the node has
// made `after_sends` unicasts within that step.
struct CrashPoint {
  Step step = 1;
  std::uint64_t after_sends = 0;
  bool operator==(const CrashPoint&) const = default;
};

struct Schedule {
  std::uint64_t seed = 0;
  DelayPolicy delay;
  std::map<NodeId, CrashPoint> crashes;

  // "3:2" crashes node 3 at step 2; "3:2+5" after its 5th send in step 2;
  // comma-separated for several nodes. Empty or "none" means no crashes.
  static std::map<NodeId, CrashPoint> parse_crashes(std::string_view text, std::size_t n) {
    std::map<NodeId, CrashPoint> out;
    if (text.empty() || text == "none") return out;
    for (const auto& item : detail::split(text, ',')) {
      auto nv = detail::split(item, ':');
      if (nv.size() != 2) throw UsageError("bad crash entry '" + item + "', want node:step[+sends]");
      NodeId node{static_cast<std::uint32_t>(detail::parse_u64(nv[0], "crash node"))};
      if (node.value < 1 || node.value > n) throw UsageError("crash node " + nv[0] + " out of range 1.." + std::to_string(n));
      auto sp = detail::split(nv[1], '+');
      if (sp.size() > 2) throw UsageError("bad crash point '" + nv[1] + "'");
      CrashPoint cp{detail::parse_u64(sp[0], "crash step"), sp.size() == 2 ? detail::parse_u64(sp[1], "crash sends") : 0};
      if (cp.step < 1) throw UsageError("crash step must be >= 1");
      if (!out.emplace(node, cp).second) throw UsageError("node " + nv[0] + " crashes twice");
    }
    return out;
  }

  static std::string crashes_str(const std::map<NodeId, CrashPoint>& c) {
    if (c.empty()) return "none";
    std::string s;
    for (const auto& [node, cp] : c) {
      if (!s.empty()) s += ',';
      s += std::to_string(node.value) + ":" + std::to_string(cp.step);
      if (cp.after_sends) s += "+" + std::to_string(cp.after_sends);
    }
    return s;
  }
};

struct Metrics {
  std::vector<std::uint64_t> unicasts_per_step;  // index = clock step
  std::vector<std::uint64_t> bytes_per_step;
  std::uint64_t unicasts = 0;
  std::uint64_t bytes = 0;
  std::uint64_t rounds = 0;       // QSC rounds (or TSB calls) per node
  std::uint64_t commits = 0;      // live deliveries
  std::uint64_t node_rounds = 0;  // live node-rounds
  std::uint64_t closing = 0;      // unicasts sent by retired nodes, not in the totals above
  std::uint64_t unprocessed = 0;  // delivered but never consumed by a finished node
  std::uint64_t undelivered = 0;  // still in flight at the end

  double commit_rate() const { return node_rounds ? double(commits) / double(node_rounds) : 0.0; }
};

class Simulator;

// Transport endpoint of one simulated node.
class Endpoint {
 public:
  Endpoint(Simulator& sim, NodeId self, std::size_t n) : sim_(&sim), self_(self), n_(n) {}

  NodeId self() const { return self_; }
  std::size_t size() const { return n_; }

  void broadcast(MsgPtr m) {
    for (std::uint32_t j = 1; j <= n_; ++j) unicast(NodeId{j}, m);
  }
  inline void unicast(NodeId to, MsgPtr m);

  bool has_message() const { return !inbox_.empty(); }
  const MsgPtr& front() const { return inbox_.front(); }
  void pop() { inbox_.pop_front(); }

  struct Awaiter {
    Endpoint* ep;
    BlockInfo info;
    bool await_ready() const noexcept { return ep->has_message(); }
    void await_suspend(std::coroutine_handle<> h) noexcept {
      ep->waiting_ = h;
      ep->block_ = info;
    }
    void await_resume() const noexcept {}
  };
  Awaiter wait(BlockInfo b) { return Awaiter{this, b}; }

  inline void begin_step(Step s);
  bool crashed() const { return crashed_; }
  Step current_step() const { return step_; }

  // The node has completed its workload; later sends are closing messages.
  void finish() { finished_ = true; }
  bool finished() const { return finished_; }

 private:
  friend class Simulator;

  Simulator* sim_;
  NodeId self_;
  std::size_t n_;
  std::deque<MsgPtr> inbox_;
  std::coroutine_handle<> waiting_;
  BlockInfo block_;
  Step step_ = 0;
  std::uint64_t sends_in_step_ = 0;
  std::optional<CrashPoint> crash_at_;
  bool crashed_ = false;
  bool finished_ = false;
};

class Simulator {
 public:
  Simulator(std::size_t n, Schedule schedule, RunTrace* trace = nullptr) : n_(n), sched_(std::move(schedule)), trace_(trace) {
    if (n == 0) throw UsageError("simulator needs at least one node");
    last_.assign(n * n, 0);
    for (std::uint32_t i = 1; i <= n; ++i) eps_.push_back(std::make_unique<Endpoint>(*this, NodeId{i}, n));
    for (const auto& [node, cp] : sched_.crashes) {
      if (node.value < 1 || node.value > n) throw UsageError("crash schedule names unknown node");
      eps_[node.value - 1]->crash_at_ = cp;
    }
    if (trace_) trace_->n = n;
  }

  Endpoint& endpoint(NodeId id) { return *eps_.at(id.value - 1); }
  std::size_t size() const { return n_; }
  const Metrics& metrics() const { return metrics_; }
  Metrics& metrics() { return metrics_; }
  std::uint64_t now() const { return now_; }

  void spawn(NodeId id, Task<void> task) { tasks_.push_back({id, std::move(task)}); }

  // Runs until every live node has finished and no message is in flight.
  void run() {
    for (auto& t : tasks_) {
      t.task.start();
      check(t);
    }
    for (;;) {
      resume_ready();
      if (queue_.empty()) break;
      now_ = queue_.top().time;
      while (!queue_.empty() && queue_.top().time == now_) {
        const Event& e = queue_.top();
        Endpoint& to = *eps_[e.to.value - 1];
        if (trace_ && trace_->record_base)
          trace_->base.push_back({BaseEvent::Type::recv, e.id, e.from, e.to, e.msg->kind, e.msg->step, e.msg->payload.digest()});
        to.inbox_.push_back(e.msg);
        queue_.pop();
      }
    }
    std::string stuck;
    for (auto& ep : eps_) {
      if (ep->crashed_) continue;
      if (!ep->finished_) stuck += "node " + std::to_string(ep->self_.value) + " " + ep->block_.describe() + "; ";
      else metrics_.unprocessed += ep->inbox_.size();
    }
    if (!stuck.empty()) {
      std::string crashed;
      for (auto& ep : eps_)
        if (ep->crashed_) crashed += (crashed.empty() ? "" : ",") + std::to_string(ep->self_.value);
      throw DeadlockError("deadlock: " + stuck + "crashed nodes: " + (crashed.empty() ? "none" : crashed));
    }
  }

 private:
  friend class Endpoint;

  struct Event {
    std::uint64_t time;
    std::uint64_t id;  // send order; ties at equal time keep it
    NodeId from;
    NodeId to;
    MsgPtr msg;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.time != b.time ? a.time > b.time : a.id > b.id;
    }
  };
  struct Proc {
    NodeId id;
    Task<void> task;
  };

  void check(Proc& p) {
    if (p.task.done()) p.task.result();  // rethrows node failures
  }

  void resume_ready() {
    for (auto& p : tasks_) {
      Endpoint& ep = *eps_[p.id.value - 1];
      if (ep.waiting_ && ep.has_message()) {
        std::exchange(ep.waiting_, {}).resume();
        check(p);
      }
    }
  }

  void crash(Endpoint& ep) {
    ep.crashed_ = true;
    if (trace_) trace_->crashes.push_back({ep.self_, ep.step_, ep.sends_in_step_});
  }

  void on_begin_step(Endpoint& ep, Step s) {
    ep.step_ = s;
    ep.sends_in_step_ = 0;
    if (!ep.crashed_ && ep.crash_at_ &&
        (s > ep.crash_at_->step || (s == ep.crash_at_->step && ep.crash_at_->after_sends == 0)))
      crash(ep);
  }

  void send(Endpoint& from, NodeId to, MsgPtr msg) {
    if (from.crashed_) return;
    if (from.crash_at_ && from.step_ == from.crash_at_->step && from.sends_in_step_ >= from.crash_at_->after_sends &&
        from.crash_at_->after_sends > 0) {
      crash(from);
      return;
    }
    if (to.value < 1 || to.value > n_) throw UsageError("unicast to unknown node " + std::to_string(to.value));
    ++from.sends_in_step_;
    const std::uint64_t id = next_id_++;
    const auto delay = std::max<std::uint64_t>(1, sched_.delay.draw(sched_.seed, from.self_, to, id, n_));
    auto& last = last_[(from.self_.value - 1) * n_ + (to.value - 1)];
    const std::uint64_t t = std::max(now_ + delay, last);
    last = t;
    const Step s = msg->step;
    if (from.finished_) {
      ++metrics_.closing;
    } else {
      count(s, msg->encoded_size());
    }
    if (trace_ && trace_->record_base)
      trace_->base.push_back({BaseEvent::Type::send, id, from.self_, to, msg->kind, s, msg->payload.digest()});
    queue_.push(Event{t, id, from.self_, to, std::move(msg)});
  }

  void count(Step s, std::size_t size) {
    if (metrics_.unicasts_per_step.size() <= s) {
      metrics_.unicasts_per_step.resize(s + 1, 0);
      metrics_.bytes_per_step.resize(s + 1, 0);
    }
    ++metrics_.unicasts_per_step[s];
    metrics_.bytes_per_step[s] += size;
    ++metrics_.unicasts;
    metrics_.bytes += size;
  }

  std::size_t n_;
  Schedule sched_;
  RunTrace* trace_;
  std::vector<std::unique_ptr<Endpoint>> eps_;
  std::vector<Proc> tasks_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::vector<std::uint64_t> last_;
  std::uint64_t now_ = 0;
  std::uint64_t next_id_ = 0;
  Metrics metrics_;
};

inline void Endpoint::unicast(NodeId to, MsgPtr m) { sim_->send(*this, to, std::move(m)); }
inline void Endpoint::begin_step(Step s) { sim_->on_begin_step(*this, s); }

// ---------------------------------------------------------------------------
// Layer stacks

enum class LayerKind { tlcr, tlcb, tlcb_full, tlcw, tlcf, qsc_tlcb, qsc_tlcf };

inline const char* layer_name(LayerKind k) {
  switch (k) {
    case LayerKind::tlcr: return "tlcr";
    case LayerKind::tlcb: return "tlcb";
    case LayerKind::tlcb_full: return "tlcb-full";
    case LayerKind::tlcw: return "tlcw";
    case LayerKind::tlcf: return "tlcf";
    case LayerKind::qsc_tlcb: return "qsc-tlcb";
    case LayerKind::qsc_tlcf: return "qsc-tlcf";
  }
  return "?";
}

inline std::optional<LayerKind> parse_layer(std::string_view s) {
  for (auto k : {LayerKind::tlcr, LayerKind::tlcb, LayerKind::tlcb_full, LayerKind::tlcw, LayerKind::tlcf,
                 LayerKind::qsc_tlcb, LayerKind::qsc_tlcf})
    if (s == layer_name(k)) return k;
  return std::nullopt;
}

inline bool runs_qsc(LayerKind k) { return k == LayerKind::qsc_tlcb || k == LayerKind::qsc_tlcf; }
inline bool full_spread_layer(LayerKind k) {
  return k == LayerKind::tlcb_full || k == LayerKind::tlcf || k == LayerKind::qsc_tlcb || k == LayerKind::qsc_tlcf;
}
inline bool tlcb_family(LayerKind k) {
  return k == LayerKind::tlcb || k == LayerKind::tlcb_full || k == LayerKind::qsc_tlcb;
}
inline bool tlcf_family(LayerKind k) { return k == LayerKind::tlcf || k == LayerKind::qsc_tlcf; }
inline Step steps_per_call(LayerKind k) {
  return (k == LayerKind::tlcr || k == LayerKind::tlcw) ? 1 : 2;
}

struct LayerSpec {
  LayerKind kind = LayerKind::qsc_tlcb;
  std::size_t n = 3;
  std::size_t f = 1;
  std::size_t t_r = 0;  // 0 = layer default
  std::size_t t_b = 0;
  std::size_t t_s = 0;
  bool defer_future = false;  // TLCR only

  // Fill unset thresholds with the layer's defaults for (n, f):
  //   TLCR           t_r = n-f
  //   TLCB family    t_r = n-f, t_s = f+1, t_b = n - ceil(f_b)
  //   TLCW           t_b = t_s = n-f
  //   TLCF family    t_r = t_b = t_s = n-f
  LayerSpec resolved() const {
    LayerSpec s = *this;
    if (n == 0 || f >= n) return s;  // left for validation to reject
    const std::size_t live = n - f;
    if (kind == LayerKind::tlcr) {
      if (!s.t_r) s.t_r = live;
    } else if (tlcb_family(kind)) {
      if (!s.t_r) s.t_r = live;
      if (!s.t_s) s.t_s = std::min(f + 1, s.t_r);
      if (!s.t_b && s.t_s <= s.t_r && s.t_r <= n) {
        std::size_t d = s.t_r - s.t_s + 1, num = s.t_r * (n - s.t_r);
        std::size_t ceil_fb = (num + d - 1) / d;
        s.t_b = n > ceil_fb ? n - ceil_fb : 0;
      }
    } else if (kind == LayerKind::tlcw) {
      if (!s.t_b) s.t_b = live;
      if (!s.t_s) s.t_s = live;
      s.t_r = s.t_b;
    } else {
      if (!s.t_r) s.t_r = live;
      if (!s.t_b) s.t_b = live;
      if (!s.t_s) s.t_s = live;
    }
    return s;
  }

  // Throws ConfigError naming every violated inequality.
  void validate() const {
    auto s = resolved();
    switch (kind) {
      case LayerKind::tlcr: {
        auto v = std::vector<std::string>{};
        if (n == 0) v.push_back("n must be positive");
        if (f >= n && n > 0) v.push_back("f=" + std::to_string(f) + " must be below n=" + std::to_string(n));
        if (n > 0 && f < n && s.t_r > n - f) v.push_back("t_r=" + std::to_string(s.t_r) + " exceeds n-f=" + std::to_string(n - f));
        if (!v.empty()) throw ConfigError(std::move(v));
        tlcr_configure(n, s.t_r, defer_future);
        break;
      }
      case LayerKind::tlcb:
        tlcb_check_config(n, s.t_r, s.t_s, s.t_b, f, false);
        break;
      case LayerKind::tlcb_full:
      case LayerKind::qsc_tlcb:
        tlcb_check_config(n, s.t_r, s.t_s, s.t_b, f, true);
        break;
      case LayerKind::tlcw:
        tlcw_configure(n, s.t_b, s.t_s, f);
        break;
      case LayerKind::tlcf:
      case LayerKind::qsc_tlcf:
        tlcf_configure(n, s.t_r, s.t_b, s.t_s, f);
        break;
    }
    if (defer_future && kind != LayerKind::tlcr) throw ConfigError({"defer_future applies to tlcr only"});
  }

  // The TSB thresholds the stack claims: spread is n for full-spread stacks.
  TsbParams declared() const {
    auto s = resolved();
    TsbParams p{n, f, s.t_r, s.t_b, s.t_s};
    if (kind == LayerKind::tlcr) p.t_b = p.t_s = 0;
    if (full_spread_layer(kind)) p.t_s = n;
    return p;
  }
};

struct RunOptions {
  std::uint64_t rounds = 10;  // QSC rounds, or TSB calls without QSC
  bool record_base = false;   // keep per-unicast send/recv events
  bool record_trace = true;
  // QSC hooks; unset means default_message and seeded priorities.
  std::function<Bytes(NodeId, std::uint64_t)> choose;
  std::function<Priority(NodeId, std::uint64_t)> priority;
};

struct SimResult {
  RunTrace trace;
  Metrics metrics;
  std::vector<DeliveryRecord> deliveries;
};

// Message chosen by node i in round q: short and distinct.
inline Bytes default_message(NodeId i, std::uint64_t q) {
  return to_bytes("n" + std::to_string(i.value) + "q" + std::to_string(q));
}

namespace detail {

template <class Layer, class Cfg>
struct NodeStack {
  LogicalClock<Endpoint> clock;
  Layer layer;
  ObservedLayer<Layer> observed;
  std::unique_ptr<QscNode<ObservedLayer<Layer>>> qsc;

  NodeStack(Endpoint& ep, ClockOptions opt, Cfg cfg, RunTrace* trace)
      : clock(ep, opt), layer(clock, cfg), observed(layer, trace) {}
};

template <class Stack>
Task<void> tsb_driver(Stack& st, Endpoint& ep, std::uint64_t calls) {
  for (std::uint64_t k = 1; k <= calls; ++k) {
    auto msg = "n" + std::to_string(ep.self().value) + "s" + std::to_string(k);
    co_await st.observed.broadcast(Blob(to_bytes(msg)));
  }
  ep.finish();
  co_await st.clock.retire();
}

template <class Stack>
Task<void> qsc_driver(Stack& st, Endpoint& ep, std::uint64_t rounds, std::vector<DeliveryRecord>* out) {
  auto d = co_await st.qsc->run(rounds);
  out->insert(out->end(), d.begin(), d.end());
  ep.finish();
  co_await st.clock.retire();
}

template <template <class> class LayerT, class Cfg>
SimResult run_stack(const LayerSpec& spec, Cfg cfg, const Schedule& sched, const RunOptions& opt) {
  using Layer = LayerT<Endpoint>;
  using Stack = NodeStack<Layer, Cfg>;
  SimResult res;
  res.trace.record_base = opt.record_base;
  RunTrace* trace = opt.record_trace || opt.record_base ? &res.trace : nullptr;
  RunTrace scratch;  // rounds are always needed for commit counting
  RunTrace* qsc_trace = trace ? trace : &scratch;
  Simulator sim(spec.n, sched, trace);
  std::vector<std::unique_ptr<Stack>> stacks;
  ClockOptions copt{spec.defer_future};
  for (std::uint32_t i = 1; i <= spec.n; ++i) {
    Endpoint& ep = sim.endpoint(NodeId{i});
    stacks.push_back(std::make_unique<Stack>(ep, copt, cfg, trace));
    auto& st = *stacks.back();
    if (runs_qsc(spec.kind)) {
      QscHooks hooks;
      hooks.choose = opt.choose ? opt.choose : default_message;
      hooks.random = opt.priority;
      QscObserver obs{qsc_trace, [&ep] { return ep.crashed(); }};
      st.qsc = std::make_unique<QscNode<ObservedLayer<Layer>>>(NodeId{i}, st.observed, sched.seed, hooks, obs);
      sim.spawn(NodeId{i}, qsc_driver(st, ep, opt.rounds, &res.deliveries));
    } else {
      sim.spawn(NodeId{i}, tsb_driver(st, ep, opt.rounds));
    }
  }
  sim.run();
  res.metrics = sim.metrics();
  res.metrics.rounds = opt.rounds;
  if (runs_qsc(spec.kind)) {
    auto cs = commit_stats(*qsc_trace);
    res.metrics.commits = cs.commits;
    res.metrics.node_rounds = cs.node_rounds;
  }
  return res;
}

}  // namespace detail

// Runs one seeded execution of a layer stack. Identical inputs give
// identical traces and metrics.
inline SimResult sim_run(const LayerSpec& spec_in, const Schedule& sched, const RunOptions& opt) {
  spec_in.validate();
  const LayerSpec spec = spec_in.resolved();
  switch (spec.kind) {
    case LayerKind::tlcr:
      return detail::run_stack<TlcrLayer>(spec, TlcrConfig{spec.n, spec.t_r, spec.defer_future}, sched, opt);
    case LayerKind::tlcb:
      return detail::run_stack<TlcbLayer>(spec, tlcb_check_config(spec.n, spec.t_r, spec.t_s, spec.t_b, spec.f, false),
                                          sched, opt);
    case LayerKind::tlcb_full:
    case LayerKind::qsc_tlcb:
      return detail::run_stack<TlcbLayer>(spec, tlcb_check_config(spec.n, spec.t_r, spec.t_s, spec.t_b, spec.f, true),
                                          sched, opt);
    case LayerKind::tlcw:
      return detail::run_stack<TlcwLayer>(spec, tlcw_configure(spec.n, spec.t_b, spec.t_s, spec.f), sched, opt);
    case LayerKind::tlcf:
    case LayerKind::qsc_tlcf:
      return detail::run_stack<TlcfLayer>(spec, tlcf_configure(spec.n, spec.t_r, spec.t_b, spec.t_s, spec.f), sched,
                                          opt);
  }
  throw UsageError("unknown layer");
}

// Exact unicasts per round (per QSC round, or per TSB call without QSC).
inline double sim_count_messages(const Metrics& m) {
  return m.rounds ? static_cast<double>(m.unicasts) / static_cast<double>(m.rounds) : 0.0;
}

inline double bytes_per_round(const Metrics& m) {
  return m.rounds ? static_cast<double>(m.bytes) / static_cast<double>(m.rounds) : 0.0;
}

}  // namespace qsc::sim
