#pragma once

// Experiment harness: run configuration, seed sweeps with every applicable
// validator, and the summary table / per-run records.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#ifdef QSC_JSON_SINGLE_HEADER
#include "json.hpp"
#else
#include <nlohmann/json.hpp>
#endif

#include "qsc/netsim.hpp"
#include "qsc/qsc_checks.hpp"
#include "qsc/qscod.hpp"

namespace qsc::cli {

struct SeedRange {
  std::uint64_t first = 0;
  std::uint64_t count = 0;

  // "a..b" inclusive, "a", or "" / "none" for no seeds.
  static SeedRange parse(const std::string& s) {
    if (s.empty() || s == "none") return {};
    auto dots = s.find("..");
    if (dots == std::string::npos) return {sim::detail::parse_u64(s, "seed"), 1};
    auto a = sim::detail::parse_u64(s.substr(0, dots), "seed range start");
    auto b = sim::detail::parse_u64(s.substr(dots + 2), "seed range end");
    return b < a ? SeedRange{a, 0} : SeedRange{a, b - a + 1};
  }
  std::string str() const {
    if (!count) return "none";
    return count == 1 ? std::to_string(first) : std::to_string(first) + ".." + std::to_string(first + count - 1);
  }
};

struct RunConfig {
  std::string layer = "qsc-tlcb";
  std::size_t n = 3;
  std::size_t f = 1;
  std::size_t t_r = 0;  // 0: layer default
  std::size_t t_b = 0;
  std::size_t t_s = 0;
  std::uint64_t rounds = 100;
  SeedRange seeds{0, 1};
  std::string crash = "none";  // node:step[+sends],...  or "random"
  std::string delay = "geometric:3";
  std::string out;             // directory for traces and records
  bool defer_future = false;
  std::size_t clients = 1;     // qscod only

  // One key=value assignment; keys match the long flag names.
  void set(const std::string& key, const std::string& value) {
    auto num = [&](const char* what) { return sim::detail::parse_u64(value, what); };
    if (key == "layer") layer = value;
    else if (key == "n") n = num("n");
    else if (key == "f") f = num("f");
    else if (key == "tr") t_r = num("tr");
    else if (key == "tb") t_b = num("tb");
    else if (key == "ts") t_s = num("ts");
    else if (key == "rounds") rounds = num("rounds");
    else if (key == "seeds") seeds = SeedRange::parse(value);
    else if (key == "crash") crash = value;
    else if (key == "delay") delay = value;
    else if (key == "out") out = value;
    else if (key == "defer-future") defer_future = value == "1" || value == "true" || value == "yes";
    else if (key == "clients") clients = num("clients");
    else throw UsageError("unknown config key '" + key + "'");
  }

  // Flat key=value lines; '#' starts a comment.
  static RunConfig parse(std::istream& in, RunConfig base) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
      auto trim = [](std::string s) {
        auto b = s.find_first_not_of(" \t\r");
        auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) throw UsageError("config line " + std::to_string(lineno) + ": expected key=value");
      base.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return base;
  }
  static RunConfig parse(std::istream& in) { return parse(in, RunConfig{}); }
  static RunConfig load(const std::filesystem::path& p, RunConfig base) {
    std::ifstream in(p);
    if (!in) throw UsageError("cannot read config " + p.string());
    return parse(in, std::move(base));
  }
  static RunConfig load(const std::filesystem::path& p) { return load(p, RunConfig{}); }

  bool is_qscod() const { return layer == "qscod"; }

  sim::LayerSpec spec() const {
    auto k = sim::parse_layer(layer);
    if (!k) throw UsageError("unknown layer '" + layer + "'");
    return sim::LayerSpec{*k, n, f, t_r, t_b, t_s, defer_future};
  }

  // Thresholds are checked by the layer's configure operation before any run.
  void validate() const {
    if (is_qscod()) {
      qscod_configure(n, t_r, t_s);
      if (clients == 0) throw UsageError("clients must be positive");
      return;
    }
    spec().validate();
    sim::DelayPolicy::parse(delay);
    if (crash != "random") sim::Schedule::parse_crashes(crash, n);
  }
};

// Crash points for one seed. "random" picks up to f nodes and a crash
// point within the run's step budget, all derived from the seed.
inline std::map<NodeId, sim::CrashPoint> crashes_for(const RunConfig& c, std::uint64_t seed) {
  if (c.crash != "random") return sim::Schedule::parse_crashes(c.crash, c.n);
  std::map<NodeId, sim::CrashPoint> out;
  const auto spec = c.spec();
  const std::uint64_t steps = c.rounds * sim::steps_per_call(spec.kind) * (sim::runs_qsc(spec.kind) ? 2 : 1);
  std::uint64_t x = splitmix64(seed ^ 0xc4a5ULL);
  const std::size_t k = c.f ? x % (c.f + 1) : 0;
  std::vector<std::uint32_t> nodes(c.n);
  for (std::uint32_t i = 0; i < c.n; ++i) nodes[i] = i + 1;
  for (std::size_t j = 0; j < k; ++j) {
    x = splitmix64(x);
    std::swap(nodes[j], nodes[j + x % (c.n - j)]);
    x = splitmix64(x);
    sim::CrashPoint cp{1 + x % std::max<std::uint64_t>(1, steps), splitmix64(x) % (2 * c.n)};
    out.emplace(NodeId{nodes[j]}, cp);
  }
  return out;
}

// Every validator that applies to the layer stack.
inline ValidationReport validate_run(const sim::LayerSpec& spec_in, const RunTrace& t) {
  const auto spec = spec_in.resolved();
  const auto k = spec.kind;
  ValidationReport rep;
  rep.absorb(validate_lockstep(t));
  rep.absorb(validate_thresholds(t, spec.declared()));
  if (sim::full_spread_layer(k)) rep.absorb(validate_fullspread(t));
  rep.absorb(validate_base_steps(t, sim::steps_per_call(k)));
  if (t.record_base) rep.absorb(validate_fifo(t));
  if (k == sim::LayerKind::tlcw) {
    rep.absorb(validate_b_subset_r(t));
    if (t.record_base) rep.absorb(validate_ack_precedence(t, spec.t_s));
  }
  if (sim::tlcb_family(k)) rep.absorb(validate_pigeonhole(t, TsbParams{spec.n, spec.f, spec.t_r, spec.t_b, spec.t_s}));
  if (sim::runs_qsc(k)) {
    rep.absorb(check_consistency(t));
    rep.absorb(check_agreement(t));
    rep.absorb(check_preservation(t));
    rep.absorb(check_validity(t));
  }
  return rep;
}

struct RunRecord {
  std::uint64_t seed = 0;
  std::size_t n = 0;
  std::size_t f = 0;
  std::string layer;
  std::uint64_t rounds = 0;
  std::uint64_t commits = 0;
  std::uint64_t node_rounds = 0;
  std::uint64_t unicasts = 0;
  std::uint64_t bytes = 0;
  std::string crash;
  std::string failure;  // first validator problem, empty when all passed

  nlohmann::ordered_json json() const {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["n"] = n;
    j["f"] = f;
    j["layer"] = layer;
    j["rounds"] = rounds;
    j["commits"] = commits;
    j["unicasts"] = unicasts;
    j["bytes"] = bytes;
    return j;
  }
};

struct Summary {
  RunConfig config;
  std::vector<RunRecord> runs;  // sorted by seed
  std::vector<std::string> failures;

  bool ok() const { return failures.empty(); }
  bool has_commits() const { return config.is_qscod() || sim::runs_qsc(config.spec().kind); }
  CommitStats commit_stats() const {
    CommitStats s;
    for (const auto& r : runs) s += CommitStats{r.node_rounds, r.commits};
    return s;
  }
  double per_round(std::uint64_t RunRecord::*field) const {
    std::uint64_t total = 0, rounds = 0;
    for (const auto& r : runs) {
      total += r.*field;
      rounds += r.rounds;
    }
    return rounds ? static_cast<double>(total) / static_cast<double>(rounds) : 0.0;
  }
};

inline RunRecord run_sim_seed(const RunConfig& c, std::uint64_t seed, bool keep_trace, sim::SimResult* keep = nullptr) {
  const auto spec = c.spec();
  sim::Schedule sched{seed, sim::DelayPolicy::parse(c.delay), crashes_for(c, seed)};
  sim::RunOptions opt;
  opt.rounds = c.rounds;
  opt.record_base = true;
  auto res = sim::sim_run(spec, sched, opt);
  RunRecord r{seed, c.n, c.f, c.layer, c.rounds, res.metrics.commits, res.metrics.node_rounds,
              res.metrics.unicasts, res.metrics.bytes, sim::Schedule::crashes_str(sched.crashes), {}};
  auto rep = validate_run(spec, res.trace);
  if (!rep.ok) r.failure = rep.problems.empty() ? "validation failed" : rep.problems.front();
  if (keep_trace && !c.out.empty()) {
    std::filesystem::create_directories(c.out);
    std::ofstream os(std::filesystem::path(c.out) / (c.layer + "-n" + std::to_string(c.n) + "-s" + std::to_string(seed) + ".trace"));
    write_trace(os, res.trace);
  }
  if (keep) *keep = std::move(res);
  return r;
}

// In-process QSCOD over memory stores: `clients` contending clients drive
// `rounds` consensus rounds; records count store requests and bytes.
inline RunRecord run_qscod_seed(const RunConfig& c, std::uint64_t seed) {
  auto cfg = qscod_configure(c.n, c.t_r, c.t_s);
  std::vector<std::unique_ptr<MemoryStore>> mem;
  std::vector<std::unique_ptr<CountingStore>> counted;
  std::vector<Store*> stores;
  for (std::size_t i = 0; i < c.n; ++i) {
    mem.push_back(std::make_unique<MemoryStore>());
    counted.push_back(std::make_unique<CountingStore>(*mem.back()));
    stores.push_back(counted.back().get());
  }
  std::vector<std::unique_ptr<QscodClient>> clients;
  for (std::uint32_t k = 0; k < c.clients; ++k) {
    QscodOptions o;
    o.client = k + 1;
    o.seed = seed;
    o.max_round = c.rounds + 1;  // round 1 is the fictitious initial round
    clients.push_back(std::make_unique<QscodClient>(cfg, stores, o));
    for (std::uint64_t m = 0; m < c.rounds; ++m)
      clients.back()->submit(to_bytes("c" + std::to_string(k + 1) + "m" + std::to_string(m)));
  }
  std::vector<std::thread> threads;
  std::vector<std::exception_ptr> errors(clients.size());
  for (std::size_t k = 0; k < clients.size(); ++k)
    threads.emplace_back([&, k] {
      try {
        clients[k]->run();
      } catch (...) {
        errors[k] = std::current_exception();
      }
    });
  for (auto& t : threads) t.join();
  RunRecord r{seed, c.n, cfg.f, c.layer, c.rounds, 0, c.rounds, 0, 0, "none", {}};
  std::set<std::uint64_t> committed;
  std::vector<const QscodClient*> view;
  for (const auto& cl : clients) {
    view.push_back(cl.get());
    for (const auto& d : cl->deliveries()) committed.insert(d.round);
  }
  r.commits = committed.size();
  for (const auto& s : counted) {
    r.unicasts += s->requests();
    r.bytes += s->bytes();
  }
  for (auto& e : errors)
    if (e && r.failure.empty()) try {
        std::rethrow_exception(e);
      } catch (const std::exception& ex) {
        r.failure = ex.what();
      }
  auto rep = qscod_check(view);
  for (std::uint64_t q = 2; q <= c.rounds + 1; ++q) replay_round(stores, q, cfg.t_r, cfg.t_s, &rep);
  if (!rep.ok && r.failure.empty()) r.failure = rep.problems.empty() ? "validation failed" : rep.problems.front();
  return r;
}

inline Summary run_suite(const RunConfig& c) {
  c.validate();
  Summary s{c, {}, {}};
  for (std::uint64_t k = 0; k < c.seeds.count; ++k) {
    const std::uint64_t seed = c.seeds.first + k;
    RunRecord r;
    try {
      r = c.is_qscod() ? run_qscod_seed(c, seed) : run_sim_seed(c, seed, true);
    } catch (const std::exception& e) {
      r = RunRecord{seed, c.n, c.f, c.layer, c.rounds, 0, 0, 0, 0, c.crash, e.what()};
    }
    if (!r.failure.empty()) s.failures.push_back("seed " + std::to_string(seed) + " crash=" + r.crash + ": " + r.failure);
    s.runs.push_back(std::move(r));
  }
  if (!c.out.empty()) {
    std::filesystem::create_directories(c.out);
    std::ofstream os(std::filesystem::path(c.out) / "records.jsonl", std::ios::app);
    for (const auto& r : s.runs) os << r.json().dump() << '\n';
  }
  return s;
}

inline std::string fixed(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

// Text table with stable columns, one row per summary, followed by any
// failures. Returns the table; records go to `records` when given.
inline std::string emit_report(const std::vector<Summary>& summaries, std::ostream* records = nullptr) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "layer" << std::right << std::setw(4) << "n" << std::setw(4) << "f"
     << std::setw(7) << "runs" << std::setw(13) << "commit_rate" << std::setw(15) << "rounds/commit"
     << std::setw(16) << "unicasts/round" << std::setw(14) << "bytes/round" << "  verdict\n";
  for (const auto& s : summaries) {
    if (s.runs.empty()) continue;
    const auto cs = s.commit_stats();
    const bool qsc = s.has_commits();
    os << std::left << std::setw(10) << s.config.layer << std::right << std::setw(4) << s.config.n << std::setw(4)
       << s.runs.front().f << std::setw(7) << s.runs.size() << std::setw(13) << (qsc ? fixed(cs.rate(), 4) : "-")
       << std::setw(15) << (qsc && cs.commits ? fixed(cs.rounds_per_commit(), 3) : "-") << std::setw(16)
       << fixed(s.per_round(&RunRecord::unicasts), 2) << std::setw(14) << fixed(s.per_round(&RunRecord::bytes), 1)
       << "  " << (s.ok() ? "ok" : "FAIL") << '\n';
    if (records)
      for (const auto& r : s.runs) *records << r.json().dump() << '\n';
  }
  for (const auto& s : summaries)
    for (const auto& f : s.failures) os << s.config.layer << " n=" << s.config.n << " " << f << '\n';
  return os.str();
}

}  // namespace qsc::cli
