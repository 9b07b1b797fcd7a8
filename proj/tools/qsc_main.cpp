#include <csignal>
#include <iostream>

#include "CLI11.hpp"
#include "qsc/suite.hpp"

namespace {

using namespace qsc;

int cmd_run(const std::string& config_file, const std::map<std::string, std::string>& flags, const std::string& json) {
  cli::RunConfig c;
  if (!config_file.empty()) c = cli::RunConfig::load(config_file);
  for (const auto& [k, v] : flags) c.set(k, v);
  auto s = cli::run_suite(c);
  std::ofstream jf;
  std::ostream* records = nullptr;
  if (json == "-") {
    records = &std::cout;
  } else if (!json.empty()) {
    jf.open(json);
    if (!jf) throw UsageError("cannot write " + json);
    records = &jf;
  }
  std::cout << cli::emit_report({s}, records);
  return s.ok() ? 0 : 1;
}

int cmd_qscod(const std::vector<std::string>& store_specs, std::size_t n, std::size_t t_r, std::size_t t_s,
              const std::vector<std::string>& messages, bool backoff, std::uint64_t seed, std::uint32_t client,
              unsigned watchdog_ms) {
  if (store_specs.empty()) throw UsageError("--stores is required");
  if (n == 0) n = store_specs.size();
  if (store_specs.size() != n)
    throw UsageError(std::to_string(store_specs.size()) + " stores given for n=" + std::to_string(n));
  auto cfg = qscod_configure(n, t_r, t_s);
  std::vector<std::shared_ptr<Store>> owned;
  std::vector<Store*> stores;
  for (const auto& s : store_specs) {
    owned.push_back(open_store(s));
    stores.push_back(owned.back().get());
  }
  QscodOptions opt;
  opt.client = client;
  opt.seed = seed;
  opt.backoff = backoff;
  opt.watchdog = std::chrono::milliseconds(watchdog_ms);
  std::mutex out_mu;
  QscodClient c(cfg, stores, opt, [&](const QscodDelivery& d) {
    std::lock_guard lock(out_mu);
    std::cout << "delivered round " << d.round << " message " << d.seq << " history " << d.history.digest().hex()
              << '\n';
  });
  for (const auto& m : messages) c.submit(to_bytes(m));
  c.run();
  return c.pending() == 0 ? 0 : 1;
}

std::atomic<bool> g_stop{false};
extern "C" void on_signal(int) { g_stop = true; }

int cmd_store(std::uint16_t port, const std::string& host, const std::string& dir, bool mem) {
  std::shared_ptr<Store> store;
  if (mem) store = std::make_shared<MemoryStore>();
  else store = std::make_shared<FileStore>(dir.empty() ? FileStore::env_dir() : std::filesystem::path(dir));
  StoreServer server(store, port, host);
  std::cout << "listening on " << host << ":" << server.port() << std::endl;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
  server.stop();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"QSC consensus simulator, store service and on-demand client"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a seed sweep with all applicable validators");
  std::string config_file, json;
  std::map<std::string, std::string> flags;
  run->add_option("--config", config_file, "key=value config file; flags override it");
  const std::pair<const char*, const char*> keys[] = {
      {"layer", "tlcr|tlcb|tlcb-full|tlcw|tlcf|qsc-tlcb|qsc-tlcf|qscod"},
      {"n", "number of nodes"},
      {"f", "crash budget"},
      {"tr", "receive threshold (0: layer default)"},
      {"tb", "broadcast threshold (0: layer default)"},
      {"ts", "spread threshold (0: layer default)"},
      {"rounds", "consensus rounds, or broadcast steps for bare layers"},
      {"seeds", "seed range a..b, a single seed, or none"},
      {"crash", "none, random, or node:step[+sends],..."},
      {"delay", "fixed:D, geometric:M, heavy:M or adversarial:K:D"},
      {"out", "directory for traces and records.jsonl"},
      {"clients", "concurrent clients for the qscod layer"},
  };
  for (const auto& [key, help] : keys) {
    run->add_option_function<std::string>(
        std::string("--") + key, [&flags, key = key](const std::string& v) { flags[key] = v; }, help);
  }
  run->add_flag_function("--defer-future", [&flags](std::int64_t) { flags["defer-future"] = "1"; },
                         "queue future-step messages instead of adopting");
  run->add_option("--json", json, "write one JSON record per run to this file ('-' for stdout)");

  auto* qscod = app.add_subcommand("qscod", "Commit messages through write-once stores");
  std::vector<std::string> stores, messages;
  std::size_t n = 0, t_r = 0, t_s = 0;
  bool no_backoff = false;
  std::uint64_t seed = 0;
  std::uint32_t client = 1;
  unsigned watchdog = 30000;
  qscod->add_option("--stores", stores, "store endpoints (host:port) or directories, one per node")
      ->delimiter(',')
      ->required();
  qscod->add_option("--n", n, "number of nodes (default: number of stores)");
  qscod->add_option("--tr", t_r, "receive threshold");
  qscod->add_option("--ts", t_s, "spread threshold");
  qscod->add_option("--message", messages, "message to commit (repeatable)")->required();
  qscod->add_flag("--no-backoff", no_backoff, "disable contention backoff");
  qscod->add_option("--backoff", [&](const CLI::results_t& r) {
    no_backoff = r.front() == "off" || r.front() == "0" || r.front() == "false";
    return true;
  }, "on|off");
  qscod->add_option("--seed", seed, "randomness seed");
  qscod->add_option("--client", client, "client identity");
  qscod->add_option("--watchdog-ms", watchdog, "stall diagnostic timeout");

  auto* store = app.add_subcommand("store", "Serve a write-once store over TCP");
  std::uint16_t port = 0;
  std::string host = "127.0.0.1", dir;
  bool mem = false;
  store->add_option("--port", port, "listen port (0 picks one)");
  store->add_option("--host", host, "listen address");
  store->add_option("--dir", dir, "data directory (default $QSC_STORE_DIR or ./qsc-store)");
  store->add_flag("--mem", mem, "keep values in memory only");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*run) return cmd_run(config_file, flags, json);
    if (*qscod) return cmd_qscod(stores, n, t_r, t_s, messages, !no_backoff, seed, client, watchdog);
    if (*store) return cmd_store(port, host, dir, mem);
  } catch (const qsc::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const qsc::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
