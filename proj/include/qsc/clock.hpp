#pragma once

// Per-node threshold logical clock. One clock owns the receive and
// broadcast logs and runs either receive-threshold steps (TLCR) or
// witnessed steps (TLCW) over them, so composite layers interleave both
// kinds on a single time line.

#include <concepts>
#include <deque>
#include <string>

#include "qsc/errors.hpp"
#include "qsc/step_message.hpp"
#include "qsc/task.hpp"
#include "qsc/tsb.hpp"

namespace qsc {

enum class StepKind : std::uint8_t { r, w };

// What a blocked node is waiting for; used for deadlock reports.
struct BlockInfo {
  Step step = 0;
  StepKind kind = StepKind::r;
  std::size_t have = 0;
  std::size_t need = 0;
  bool retired = false;

  std::string describe() const {
    if (retired) return "retired after step " + std::to_string(step);
    std::string s = "blocked in clock step " + std::to_string(step);
    s += kind == StepKind::r ? " (tlcr): |R|=" : " (tlcw): |B|=";
    s += std::to_string(have) + " < ";
    s += kind == StepKind::r ? "t_r=" : "t_b=";
    return s + std::to_string(need);
  }
};

template <class T>
concept Transport = requires(T& t, const T& ct, NodeId id, MsgPtr m, Step s, BlockInfo b) {
  { ct.self() } -> std::same_as<NodeId>;
  { ct.size() } -> std::convertible_to<std::size_t>;
  t.broadcast(m);
  t.unicast(id, m);
  { t.has_message() } -> std::convertible_to<bool>;
  { t.front() } -> std::convertible_to<const MsgPtr&>;
  t.pop();
  t.wait(b);
  t.begin_step(s);
  { ct.crashed() } -> std::convertible_to<bool>;
};

struct ClockOptions {
  // Queue future-step messages instead of adopting their prior sets, and
  // omit prior sets from outgoing messages.
  bool defer_future = false;
};

template <Transport Net>
class LogicalClock {
 public:
  explicit LogicalClock(Net& net, ClockOptions opt = {}) : net_(net), opt_(opt) {
    R_.emplace_back();
    B_.emplace_back();
  }

  Net& net() { return net_; }
  const ClockOptions& options() const { return opt_; }

  // Last started step; 0 before the first step.
  Step step() const { return R_.size() - 1; }
  const MessageSet& r_log(Step s) const { return R_.at(s); }
  const MessageSet& b_log(Step s) const { return B_.at(s); }

  Task<TsbResult> r_step(Blob m, std::size_t t_r) {
    const Step s = start(StepKind::r);
    net_.broadcast(make(MsgKind::plain, s, std::move(m)));
    replay_deferred(s);
    while (R_[s].size() < t_r) {
      if (!net_.has_message()) {
        co_await net_.wait(BlockInfo{s, StepKind::r, R_[s].size(), t_r});
        continue;
      }
      const MsgPtr msg = net_.front();
      switch (classify(*msg, s)) {
        case Class::late:
          net_.pop();
          break;
        case Class::current:
          absorb_r(*msg, s);
          net_.pop();
          break;
        case Class::next:
          if (opt_.defer_future) {
            defer(msg);
            break;
          }
          adopt(*msg, s);
          if (R_[s].size() < t_r) throw ProtocolViolation("viral adoption left |R| below t_r at step " + std::to_string(s));
          break;
        case Class::gap:
          gap(msg, s);
          break;
      }
    }
    drain(s, [&](const StepMessage& m2) { absorb_r(m2, s); });
    co_return TsbResult{R_[s], MessageSet{}};
  }

  Task<TsbResult> w_step(Blob m, std::size_t t_b, std::size_t t_s) {
    const Step s = start(StepKind::w);
    own_ = m;
    acks_ = MessageSet{};
    t_s_ = t_s;
    net_.broadcast(make(MsgKind::req, s, std::move(m)));
    while (B_[s].size() < t_b) {
      if (!net_.has_message()) {
        co_await net_.wait(BlockInfo{s, StepKind::w, B_[s].size(), t_b});
        continue;
      }
      const MsgPtr msg = net_.front();
      switch (classify(*msg, s)) {
        case Class::late:
          net_.pop();
          break;
        case Class::current:
          absorb_w(*msg, s);
          net_.pop();
          break;
        case Class::next:
          adopt(*msg, s);
          if (B_[s].size() < t_b) throw ProtocolViolation("viral adoption left |B| below t_b at step " + std::to_string(s));
          break;
        case Class::gap:
          gap(msg, s);
          break;
      }
    }
    drain(s, [&](const StepMessage& m2) { absorb_w(m2, s); });
    co_return TsbResult{R_[s], B_[s]};
  }

  // After the last step: announce the final sets once as a next-step
  // message, so peers still inside that step finish by viral adoption as
  // they would in an unbounded run, then discard everything that arrives.
  Task<void> retire() {
    const Step s = step();
    if (s > 0 && !opt_.defer_future) {
      auto m = std::make_shared<StepMessage>();
      m->sender = net_.self();
      m->step = s + 1;
      m->prior_r = std::make_shared<const MessageSet>(R_[s]);
      if (!B_[s].empty()) m->prior_b = std::make_shared<const MessageSet>(B_[s]);
      net_.broadcast(std::move(m));
    }
    for (;;) {
      while (net_.has_message()) net_.pop();
      co_await net_.wait(BlockInfo{s, kinds_.back(), 0, 0, true});
    }
  }

 private:
  enum class Class { late, current, next, gap };

  Step start(StepKind kind) {
    R_.emplace_back();
    B_.emplace_back();
    kinds_.push_back(kind);
    const Step s = step();
    if (!opt_.defer_future) prior_r_ = std::make_shared<const MessageSet>(R_[s - 1]);
    prior_b_ = B_[s - 1].empty() ? nullptr : std::make_shared<const MessageSet>(B_[s - 1]);
    net_.begin_step(s);
    return s;
  }

  MsgPtr make(MsgKind kind, Step s, Blob payload) const {
    auto m = std::make_shared<StepMessage>();
    m->kind = kind;
    m->sender = net_.self();
    m->step = s;
    m->payload = std::move(payload);
    m->prior_r = prior_r_;
    m->prior_b = prior_b_;
    return m;
  }

  static Class classify(const StepMessage& m, Step s) {
    if (m.step < s) return Class::late;
    if (m.step == s) return Class::current;
    if (m.step == s + 1) return Class::next;
    return Class::gap;
  }

  void absorb_r(const StepMessage& m, Step s) {
    if (m.kind != MsgKind::plain)
      throw ProtocolViolation(std::string(kind_name(m.kind)) + " message in receive-threshold step " + std::to_string(s));
    R_[s].insert(m.sender, m.payload);
  }

  void absorb_w(const StepMessage& m, Step s) {
    switch (m.kind) {
      case MsgKind::req:
        if (R_[s].insert(m.sender, m.payload)) net_.unicast(m.sender, make(MsgKind::ack, s, m.payload));
        break;
      case MsgKind::ack:
        if (!(m.payload == own_))
          throw ProtocolViolation("ack from node " + std::to_string(m.sender.value) + " names a different message");
        if (acks_.insert(m.sender, m.payload) && acks_.size() == t_s_) net_.broadcast(make(MsgKind::wit, s, own_));
        break;
      case MsgKind::wit:
        B_[s].insert(m.sender, m.payload);
        break;
      case MsgKind::plain:
        throw ProtocolViolation("plain message in witnessed step " + std::to_string(s));
    }
  }

  // Next-step message: take over the sets its sender used to finish step s.
  // The message itself stays queued and is processed in step s + 1.
  void adopt(const StepMessage& m, Step s) {
    if (!m.prior_r) throw ProtocolViolation("next-step message without prior receive set");
    R_[s].merge(*m.prior_r);
    if (m.prior_b) B_[s].merge(*m.prior_b);
  }

  void gap(const MsgPtr& msg, Step s) {
    if (opt_.defer_future) {
      defer(msg);
      return;
    }
    throw TransportIntegrityError("node " + std::to_string(net_.self().value) + " at step " + std::to_string(s) +
                                  " received step-" + std::to_string(msg->step) + " message from node " +
                                  std::to_string(msg->sender.value));
  }

  void defer(const MsgPtr& msg) {
    deferred_.push_back(msg);
    net_.pop();
  }

  void replay_deferred(Step s) {
    std::deque<MsgPtr> keep;
    for (auto& m : deferred_) {
      if (m->step == s)
        absorb_r(*m, s);
      else if (m->step > s)
        keep.push_back(std::move(m));
    }
    deferred_ = std::move(keep);
  }

  // Take already-delivered messages of step s; stop at the first one that
  // belongs to a later step.
  template <class F>
  void drain(Step s, F&& absorb) {
    while (net_.has_message()) {
      const MsgPtr msg = net_.front();
      if (msg->step < s) {
        net_.pop();
      } else if (msg->step == s) {
        absorb(*msg);
        net_.pop();
      } else if (opt_.defer_future) {
        defer(msg);
      } else {
        break;
      }
    }
  }

  Net& net_;
  ClockOptions opt_;
  std::vector<MessageSet> R_;
  std::vector<MessageSet> B_;
  std::vector<StepKind> kinds_{StepKind::r};
  SetPtr prior_r_;
  SetPtr prior_b_;
  std::deque<MsgPtr> deferred_;
  Blob own_;
  MessageSet acks_;
  std::size_t t_s_ = 0;
};

}  // namespace qsc
