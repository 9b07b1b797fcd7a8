#pragma once

#include "qsc/clock.hpp"
#include "qsc/errors.hpp"
#include "qsc/tlcb.hpp"

namespace qsc {

struct TlcfConfig {
  std::size_t n = 0;
  std::size_t t_r = 0;
  std::size_t t_b = 0;
  std::size_t t_s = 0;
  std::size_t f = 0;
};

inline std::vector<std::string> tlcf_violations(std::size_t n, std::size_t t_r, std::size_t t_b, std::size_t t_s,
                                                std::size_t f) {
  std::vector<std::string> v;
  auto num = [](std::size_t x) { return std::to_string(x); };
  if (n == 0) v.push_back("n must be positive");
  if (f >= n && n > 0) v.push_back("f=" + num(f) + " must be below n=" + num(n));
  auto bounded = [&](const char* name, std::size_t t) {
    if (t == 0) v.push_back(std::string(name) + " must be positive");
    if (f < n && t > n - f) v.push_back(std::string(name) + "=" + num(t) + " exceeds n-f=" + num(n - f));
  };
  bounded("t_r", t_r);
  bounded("t_b", t_b);
  bounded("t_s", t_s);
  if (t_r + t_s <= n) v.push_back("full spread needs t_r+t_s > n, got " + num(t_r) + "+" + num(t_s) + " <= " + num(n));
  return v;
}

inline TlcfConfig tlcf_configure(std::size_t n, std::size_t t_r, std::size_t t_b, std::size_t t_s, std::size_t f) {
  auto v = tlcf_violations(n, t_r, t_b, t_s, f);
  if (!v.empty()) throw ConfigError(std::move(v));
  return {n, t_r, t_b, t_s, f};
}

// One witnessed step, then one receive-threshold step regossiping its R.
template <Transport Net>
class TlcfLayer {
 public:
  static constexpr Step steps_per_call = 2;

  TlcfLayer(LogicalClock<Net>& clock, TlcfConfig cfg) : clock_(clock), cfg_(cfg) {
    if (clock.options().defer_future) throw UsageError("TLCF needs prior sets for viral adoption");
  }

  Task<TsbResult> broadcast(Blob m) {
    auto first = co_await clock_.w_step(std::move(m), cfg_.t_b, cfg_.t_s);
    Blob gossip(first.R.encode());
    auto second = co_await clock_.r_step(std::move(gossip), cfg_.t_r);
    TsbResult out;
    out.R = std::move(first.R);
    out.B = std::move(first.B);
    merge_gossip(second.R, 0, out.R, nullptr);
    co_return out;
  }

  LogicalClock<Net>& clock() { return clock_; }
  const TlcfConfig& config() const { return cfg_; }

 private:
  LogicalClock<Net>& clock_;
  TlcfConfig cfg_;
};

}  // namespace qsc
