#include <gtest/gtest.h>
#include <manual_net.hpp>
#include <qsc/tlcf.hpp>
#include <sim_util.hpp>

using namespace qsc;
using namespace qsc::test;
using sim::LayerKind;
using sim::LayerSpec;

TEST(TlcfConfig, Examples) {
  EXPECT_NO_THROW(tlcf_configure(3, 2, 2, 2, 1));
  EXPECT_NO_THROW(tlcf_configure(5, 3, 3, 3, 2));
  EXPECT_NO_THROW(tlcf_configure(1, 1, 1, 1, 0));
  try {
    tlcf_configure(4, 2, 2, 2, 1);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("full spread needs t_r+t_s > n, got 2+2 <= 4"), std::string::npos);
  }
  EXPECT_THROW(tlcf_configure(5, 4, 3, 3, 2), ConfigError);
  EXPECT_THROW(tlcf_configure(3, 2, 0, 2, 1), ConfigError);
}

TEST(TlcfConfig, DefaultsAreMajorities) {
  auto s = LayerSpec{LayerKind::tlcf, 5, 2}.resolved();
  EXPECT_EQ(s.t_r, 3u);
  EXPECT_EQ(s.t_b, 3u);
  EXPECT_EQ(s.t_s, 3u);
  EXPECT_EQ((LayerSpec{LayerKind::tlcf, 5, 2}.declared().t_s), 5u);
}

TEST(TlcfLayer, FullSpreadOverSeedsAndCrashes) {
  struct Case {
    std::size_t n, f;
    std::vector<std::string> crashes;
  };
  for (const auto& c : {Case{3, 1, {"", "1:1", "2:3+2", "3:6+4"}}, Case{5, 2, {"", "4:1,5:1", "1:3+1,2:7+5"}}}) {
    const LayerSpec spec{LayerKind::tlcf, c.n, c.f};
    for (const auto& crash : c.crashes)
      for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto r = run(spec, seed, 8, seed % 2 ? "adversarial:1:30" : "heavy:3", crash, true);
        auto rep = cli::validate_run(spec, r.trace);
        ASSERT_TRUE(rep.ok) << "n=" << c.n << " crash " << crash << " seed " << seed << ": " << rep.summary();
      }
  }
}

TEST(TlcfLayer, SingleNode) {
  auto r = run(LayerSpec{LayerKind::tlcf, 1, 0}, 0, 4, "fixed:1");
  ASSERT_EQ(r.trace.calls.size(), 4u);
  for (const auto& c : r.trace.calls) {
    EXPECT_EQ(c.R.size(), 1u);
    EXPECT_EQ(c.B.size(), 1u);
  }
}

TEST(TlcfLayer, RefusesDeferredClock) {
  ManualNet net(NodeId{1}, 3);
  LogicalClock<ManualNet> clock(net, ClockOptions{true});
  EXPECT_THROW((TlcfLayer<ManualNet>(clock, tlcf_configure(3, 2, 2, 2, 1))), UsageError);
}
