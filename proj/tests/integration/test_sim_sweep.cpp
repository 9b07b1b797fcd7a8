#include <gtest/gtest.h>
#include <qsc/suite.hpp>

using namespace qsc;
using namespace qsc::cli;

namespace {

struct Sweep {
  const char* layer;
  const char* n;
  const char* f;
  const char* delay;
  bool defer = false;
};

std::string name(const Sweep& s) {
  std::string out = std::string(s.layer) + "_n" + s.n + "_" + s.delay + (s.defer ? "_defer" : "");
  for (auto& c : out)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return out;
}

void PrintTo(const Sweep& s, std::ostream* os) { *os << name(s); }

class SimSweep : public ::testing::TestWithParam<Sweep> {};

}  // namespace

// Every validator that applies to the layer, over random crash sets.
TEST_P(SimSweep, RandomCrashesValidate) {
  const auto& p = GetParam();
  RunConfig c;
  c.set("layer", p.layer);
  c.set("n", p.n);
  c.set("f", p.f);
  c.set("delay", p.delay);
  c.set("crash", "random");
  c.set("rounds", "60");
  c.set("seeds", "0..11");
  if (p.defer) c.set("defer-future", "1");
  auto s = run_suite(c);
  ASSERT_TRUE(s.ok()) << s.failures.front();
  ASSERT_EQ(s.runs.size(), 12u);
  std::set<std::string> crash_sets;
  for (const auto& r : s.runs) crash_sets.insert(r.crash);
  EXPECT_GT(crash_sets.size(), 2u);
  if (c.layer.rfind("qsc", 0) == 0) {
    EXPECT_GT(s.commit_stats().rate(), 0.1);
  }
}

INSTANTIATE_TEST_SUITE_P(
    Layers, SimSweep,
    ::testing::Values(Sweep{"tlcr", "3", "1", "geometric:3"}, Sweep{"tlcr", "4", "1", "adversarial:1:20", true},
                      Sweep{"tlcb", "3", "1", "geometric:3"}, Sweep{"tlcb", "6", "1", "adversarial:1:20"},
                      Sweep{"tlcb-full", "3", "1", "heavy:4"}, Sweep{"tlcw", "3", "1", "geometric:3"},
                      Sweep{"tlcw", "5", "2", "adversarial:2:30"}, Sweep{"tlcf", "5", "2", "geometric:3"},
                      Sweep{"tlcf", "7", "3", "heavy:4"}, Sweep{"qsc-tlcb", "3", "1", "geometric:3"},
                      Sweep{"qsc-tlcb", "6", "1", "adversarial:1:20"}, Sweep{"qsc-tlcf", "3", "1", "fixed:1"},
                      Sweep{"qsc-tlcf", "5", "2", "adversarial:1:20"}, Sweep{"qsc-tlcf", "7", "3", "geometric:3"}),
    [](const auto& info) { return name(info.param); });

// Crashing more than f nodes must surface as a failure, never as a hang or a silent pass.
TEST(SimSweepLimits, BeyondBudgetDeadlocksLoudly) {
  RunConfig c;
  c.set("layer", "qsc-tlcf");
  c.set("n", "5");
  c.set("f", "2");
  c.set("crash", "1:3,2:3,3:3");
  c.set("rounds", "20");
  c.set("seeds", "0..3");
  auto s = run_suite(c);
  ASSERT_EQ(s.failures.size(), 4u);
  for (const auto& f : s.failures) EXPECT_NE(f.find("deadlock"), std::string::npos) << f;
}
