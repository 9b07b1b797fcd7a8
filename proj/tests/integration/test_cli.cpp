#include <gtest/gtest.h>
#include <qsc/kvstore.hpp>
#include <temp_dir.hpp>

#include <csignal>
#include <cstdio>
#include <fstream>
#include <regex>

#include <sys/wait.h>
#include <unistd.h>

#ifndef QSC_CLI_PATH
#error "QSC_CLI_PATH must point at the qsc binary"
#endif

namespace {

struct Result {
  int code = -1;
  std::string out;
};

// Runs the CLI through the shell; stderr is folded into out.
Result cli(const std::string& args) {
  std::string cmd = std::string("'") + QSC_CLI_PATH + "' " + args + " 2>&1";
  Result r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t got;
  while ((got = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, got);
  int status = ::pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

// `qsc store` as a child process; reads the port from its banner.
class StoreProcess {
 public:
  explicit StoreProcess(const std::string& dir) {
    int fds[2];
    if (::pipe(fds) != 0) throw std::runtime_error("pipe");
    pid_ = ::fork();
    if (pid_ == 0) {
      ::dup2(fds[1], 1);
      ::close(fds[0]);
      ::close(fds[1]);
      ::execl(QSC_CLI_PATH, QSC_CLI_PATH, "store", "--port", "0", "--dir", dir.c_str(), static_cast<char*>(nullptr));
      ::_exit(127);
    }
    ::close(fds[1]);
    std::string line;
    char c;
    while (::read(fds[0], &c, 1) == 1 && c != '\n') line += c;
    ::close(fds[0]);
    std::smatch m;
    if (std::regex_match(line, m, std::regex(R"(listening on 127\.0\.0\.1:(\d+))"))) port_ = std::stoi(m[1]);
  }
  ~StoreProcess() { stop(); }
  int stop() {
    if (pid_ <= 0) return exit_;
    ::kill(pid_, SIGTERM);
    int status = 0;
    ::waitpid(pid_, &status, 0);
    pid_ = -1;
    exit_ = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return exit_;
  }
  int port() const { return port_; }

 private:
  pid_t pid_ = -1;
  int port_ = 0;
  int exit_ = -1;
};

std::size_t count(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST(Cli, HelpAndMissingSubcommand) {
  auto help = cli("--help");
  EXPECT_EQ(help.code, 0);
  for (const char* sub : {"run", "qscod", "store"}) EXPECT_NE(help.out.find(sub), std::string::npos) << sub;
  EXPECT_NE(cli("").code, 0);
}

TEST(Cli, RunReportsOneRowPerConfig) {
  auto r = cli("run --layer qsc-tlcb --n 3 --f 1 --rounds 40 --seeds 0..4");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("layer ", 0), 0u) << r.out;
  EXPECT_NE(r.out.find("qsc-tlcb     3   1      5"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("36.00"), std::string::npos) << r.out;
  EXPECT_EQ(count(r.out, "\n"), 2u);
}

TEST(Cli, RunIsByteForByteRepeatable) {
  const std::string args = "run --layer qsc-tlcf --n 5 --f 2 --rounds 30 --seeds 0..3 --crash random --delay adversarial:1:20 --json -";
  auto a = cli(args), b = cli(args);
  ASSERT_EQ(a.code, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(count(a.out, "{\"seed\":"), 4u);
}

TEST(Cli, ConfigFileWithFlagOverride) {
  qsc::test::TempDir dir("qsc-cli");
  {
    std::ofstream cfg(dir / "sweep.cfg");
    cfg << "# small sweep\nlayer=tlcw\nn=3\nf=1\nrounds=10\nseeds=0..1\n";
  }
  auto out = dir / "runs";
  auto r = cli("run --config '" + (dir / "sweep.cfg").string() + "' --seeds 0..2 --out '" + out.string() + "'");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("tlcw         3   1      3"), std::string::npos) << r.out;
  EXPECT_TRUE(std::filesystem::exists(out / "records.jsonl"));
  EXPECT_TRUE(std::filesystem::exists(out / "tlcw-n3-s2.trace"));
}

TEST(Cli, ExitCodes) {
  auto bad_key = cli("run --rounds ten");
  EXPECT_EQ(bad_key.code, 2) << bad_key.out;
  auto bad_cfg = cli("run --layer qsc-tlcb --n 5 --f 2");
  EXPECT_EQ(bad_cfg.code, 2) << bad_cfg.out;
  EXPECT_NE(bad_cfg.out.find("config error"), std::string::npos);
  auto missing = cli("run --config /nonexistent/x.cfg");
  EXPECT_EQ(missing.code, 2) << missing.out;
  auto unknown = cli("run --colour red");
  EXPECT_NE(unknown.code, 0);

  auto deadlock = cli("run --rounds 5 --seeds 3 --crash 2:1,3:1");
  EXPECT_EQ(deadlock.code, 1) << deadlock.out;
  EXPECT_NE(deadlock.out.find("FAIL"), std::string::npos);
  EXPECT_NE(deadlock.out.find("seed 3"), std::string::npos);

  auto no_store = cli("qscod --stores 127.0.0.1:1,127.0.0.1:1,127.0.0.1:1 --message x --watchdog-ms 2000");
  EXPECT_EQ(no_store.code, 3) << no_store.out;
  EXPECT_NE(no_store.out.find("t_r=2"), std::string::npos) << no_store.out;
  auto wrong_n = cli("qscod --stores a,b --n 3 --message x");
  EXPECT_EQ(wrong_n.code, 2) << wrong_n.out;
}

TEST(Cli, QscodAgainstDirectories) {
  qsc::test::TempDir dir("qsc-cli");
  std::string stores;
  for (int i = 1; i <= 4; ++i) stores += (i > 1 ? "," : "") + (dir / ("s" + std::to_string(i))).string();
  auto first = cli("qscod --stores " + stores + " --message alpha --message beta --client 1");
  ASSERT_EQ(first.code, 0) << first.out;
  EXPECT_EQ(count(first.out, "delivered round "), 2u) << first.out;
  EXPECT_NE(first.out.find("message 1 history "), std::string::npos);
  // a second client resumes on the same stores and sees the earlier rounds taken
  auto second = cli("qscod --stores " + stores + " --message gamma --client 2 --backoff off");
  ASSERT_EQ(second.code, 0) << second.out;
  std::smatch m;
  ASSERT_TRUE(std::regex_search(second.out, m, std::regex(R"(delivered round (\d+) message 0)"))) << second.out;
  EXPECT_GT(std::stoul(m[1]), 3u);
}

TEST(Cli, StoreServesQscodClients) {
  qsc::test::TempDir dir("qsc-cli");
  std::vector<std::unique_ptr<StoreProcess>> procs;
  std::string stores;
  for (int i = 1; i <= 3; ++i) {
    procs.push_back(std::make_unique<StoreProcess>((dir / ("node" + std::to_string(i))).string()));
    ASSERT_GT(procs.back()->port(), 0);
    stores += (i > 1 ? ",127.0.0.1:" : "127.0.0.1:") + std::to_string(procs.back()->port());
  }
  auto r = cli("qscod --stores " + stores + " --message one --message two --message three --seed 9");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(count(r.out, "delivered round "), 3u);

  // the store keeps its data across a restart
  EXPECT_EQ(procs[0]->stop(), 0);
  procs[0] = std::make_unique<StoreProcess>((dir / "node1").string());
  qsc::RemoteStore s("127.0.0.1", static_cast<std::uint16_t>(procs[0]->port()));
  EXPECT_TRUE(s.read(qsc::Key{2, 1}).has_value());
  EXPECT_TRUE(std::filesystem::exists(dir / "node1"));
}
