#pragma once

#include "qsc/clock.hpp"
#include "qsc/errors.hpp"

namespace qsc {

struct TlcrConfig {
  std::size_t n = 0;
  std::size_t t_r = 0;
  bool defer_future = false;
};

inline TlcrConfig tlcr_configure(std::size_t n, std::size_t t_r, bool defer_future = false) {
  std::vector<std::string> v;
  if (n == 0) v.push_back("n must be positive");
  if (t_r > n) v.push_back("t_r=" + std::to_string(t_r) + " exceeds n=" + std::to_string(n));
  if (!v.empty()) throw ConfigError(std::move(v));
  return {n, t_r, defer_future};
}

// TSB(t_r, 0, 0): one clock step per call, B always empty.
template <Transport Net>
class TlcrLayer {
 public:
  static constexpr Step steps_per_call = 1;

  TlcrLayer(LogicalClock<Net>& clock, TlcrConfig cfg) : clock_(clock), cfg_(cfg) {
    if (clock.options().defer_future != cfg.defer_future)
      throw UsageError("clock and TLCR config disagree on defer_future");
  }

  Task<TsbResult> broadcast(Blob m) { co_return co_await clock_.r_step(std::move(m), cfg_.t_r); }

  LogicalClock<Net>& clock() { return clock_; }
  const TlcrConfig& config() const { return cfg_; }

 private:
  LogicalClock<Net>& clock_;
  TlcrConfig cfg_;
};

}  // namespace qsc
