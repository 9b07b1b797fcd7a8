#pragma once

#include <map>

#include "qsc/clock.hpp"
#include "qsc/errors.hpp"

namespace qsc {

struct TlcbConfig {
  std::size_t n = 0;
  std::size_t t_r = 0;
  std::size_t t_s = 0;
  std::size_t t_b = 0;
  std::size_t f = 0;
  double f_b = 0;  // t_r (n - t_r) / (t_r - t_s + 1), informational
  bool full_spread = false;

  // Largest number of columns that may miss the spread threshold.
  std::size_t f_b_floor() const { return t_r * (n - t_r) / (t_r - t_s + 1); }
};

// Every violated inequality, individually. Empty means admissible.
inline std::vector<std::string> tlcb_violations(std::size_t n, std::size_t t_r, std::size_t t_s, std::size_t t_b,
                                                std::size_t f, bool want_full_spread) {
  std::vector<std::string> v;
  auto num = [](std::size_t x) { return std::to_string(x); };
  if (n == 0) v.push_back("n must be positive");
  if (f >= n && n > 0) v.push_back("f=" + num(f) + " must be below n=" + num(n));
  if (t_r == 0) v.push_back("t_r must be positive");
  if (f < n && t_r > n - f) v.push_back("t_r=" + num(t_r) + " exceeds n-f=" + num(n - f));
  if (t_s == 0) v.push_back("t_s must be positive");
  if (t_s > t_r) v.push_back("t_s=" + num(t_s) + " exceeds t_r=" + num(t_r));
  if (t_b == 0) v.push_back("t_b must be positive");
  if (t_r > 0 && t_r <= n && t_s > 0 && t_s <= t_r) {
    // t_b <= n - t_r(n - t_r)/d, cross-multiplied by d = t_r - t_s + 1 > 0
    std::size_t d = t_r - t_s + 1;
    if (t_b * d + t_r * (n - t_r) > n * d)
      v.push_back("t_b=" + num(t_b) + " exceeds n-f_b with f_b=" + num(t_r * (n - t_r)) + "/" + num(d));
  }
  if (want_full_spread && t_r + t_s <= n)
    v.push_back("full spread needs t_r+t_s > n, got " + num(t_r) + "+" + num(t_s) + " <= " + num(n));
  return v;
}

inline TlcbConfig tlcb_check_config(std::size_t n, std::size_t t_r, std::size_t t_s, std::size_t t_b, std::size_t f,
                                    bool want_full_spread) {
  auto v = tlcb_violations(n, t_r, t_s, t_b, f, want_full_spread);
  if (!v.empty()) throw ConfigError(std::move(v));
  TlcbConfig c{n, t_r, t_s, t_b, f, 0.0, t_r + t_s > n};
  c.f_b = static_cast<double>(t_r * (n - t_r)) / static_cast<double>(t_r - t_s + 1);
  return c;
}

// Receive sets gossiped in a second step: union them into R, and collect
// into B every message present in at least t_s of them.
inline void merge_gossip(const MessageSet& gossip, std::size_t t_s, MessageSet& R, MessageSet* B) {
  std::map<std::pair<NodeId, Digest>, std::pair<std::size_t, Blob>> seen;
  for (const auto& g : gossip) {
    auto set = MessageSet::decode(g.message.bytes());
    for (const auto& e : set) {
      R.insert(e.sender, e.message);
      if (B) {
        auto& slot = seen[{e.sender, e.message.digest()}];
        if (slot.first++ == 0) slot.second = e.message;
      }
    }
  }
  if (B)
    for (const auto& [key, v] : seen)
      if (v.first >= t_s) B->insert(key.first, v.second);
}

// Two receive-threshold steps: broadcast m, then rebroadcast what arrived.
template <Transport Net>
class TlcbLayer {
 public:
  static constexpr Step steps_per_call = 2;

  TlcbLayer(LogicalClock<Net>& clock, TlcbConfig cfg) : clock_(clock), cfg_(cfg) {
    if (clock.options().defer_future) throw UsageError("TLCB needs prior sets for viral adoption");
  }

  Task<TsbResult> broadcast(Blob m) {
    auto first = co_await clock_.r_step(std::move(m), cfg_.t_r);
    Blob gossip(first.R.encode());
    auto second = co_await clock_.r_step(std::move(gossip), cfg_.t_r);
    TsbResult out;
    out.R = std::move(first.R);
    merge_gossip(second.R, cfg_.t_s, out.R, &out.B);
    co_return out;
  }

  LogicalClock<Net>& clock() { return clock_; }
  const TlcbConfig& config() const { return cfg_; }

 private:
  LogicalClock<Net>& clock_;
  TlcbConfig cfg_;
};

}  // namespace qsc
