#pragma once

#include "qsc/clock.hpp"
#include "qsc/errors.hpp"

namespace qsc {

struct TlcwConfig {
  std::size_t n = 0;
  std::size_t t_b = 0;
  std::size_t t_s = 0;
  std::size_t f = 0;
};

inline std::vector<std::string> tlcw_violations(std::size_t n, std::size_t t_b, std::size_t t_s, std::size_t f) {
  std::vector<std::string> v;
  auto num = [](std::size_t x) { return std::to_string(x); };
  if (n == 0) v.push_back("n must be positive");
  if (f >= n && n > 0) v.push_back("f=" + num(f) + " must be below n=" + num(n));
  if (t_b == 0) v.push_back("t_b must be positive");
  if (t_s == 0) v.push_back("t_s must be positive");
  if (f < n && t_b > n - f) v.push_back("t_b=" + num(t_b) + " exceeds n-f=" + num(n - f));
  if (f < n && t_s > n - f) v.push_back("t_s=" + num(t_s) + " exceeds n-f=" + num(n - f));
  return v;
}

inline TlcwConfig tlcw_configure(std::size_t n, std::size_t t_b, std::size_t t_s, std::size_t f) {
  auto v = tlcw_violations(n, t_b, t_s, f);
  if (!v.empty()) throw ConfigError(std::move(v));
  return {n, t_b, t_s, f};
}

// TSB(t_b, t_b, t_s) via request / acknowledge / witnessed exchange.
template <Transport Net>
class TlcwLayer {
 public:
  static constexpr Step steps_per_call = 1;

  TlcwLayer(LogicalClock<Net>& clock, TlcwConfig cfg) : clock_(clock), cfg_(cfg) {
    if (clock.options().defer_future) throw UsageError("TLCW needs prior sets for viral adoption");
  }

  Task<TsbResult> broadcast(Blob m) { co_return co_await clock_.w_step(std::move(m), cfg_.t_b, cfg_.t_s); }

  LogicalClock<Net>& clock() { return clock_; }
  const TlcwConfig& config() const { return cfg_; }

 private:
  LogicalClock<Net>& clock_;
  TlcwConfig cfg_;
};

}  // namespace qsc
