#include <gtest/gtest.h>
#include <history_util.hpp>
#include <qsc/qscod.hpp>

#include <future>
#include <thread>

using namespace qsc;
using namespace std::chrono_literals;

namespace {

struct Stores {
  explicit Stores(std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) owned.push_back(std::make_unique<MemoryStore>());
    for (auto& s : owned) ptrs.push_back(s.get());
  }
  std::vector<std::unique_ptr<MemoryStore>> owned;
  std::vector<Store*> ptrs;
};

class BrokenStore final : public Store {
 public:
  void write_once(const Key&, ByteSpan) override { throw StoreIoError("disk on fire"); }
  std::optional<Bytes> read(const Key&) override { throw StoreIoError("disk on fire"); }
};

std::string text(const Bytes& b) { return std::string(b.begin(), b.end()); }

}  // namespace

TEST(QscodConfig, Defaults) {
  auto c = qscod_configure(3);
  EXPECT_EQ(c.t_r, 2u);
  EXPECT_EQ(c.t_s, 2u);
  EXPECT_EQ(c.t_b, 1u);
  EXPECT_EQ(c.f, 1u);
  auto c9 = qscod_configure(9);
  EXPECT_EQ(c9.t_r, 7u);
  EXPECT_EQ(c9.t_s, 3u);
  EXPECT_GE(c9.t_b, 1u);
  EXPECT_EQ(qscod_configure(1).t_r, 1u);
  EXPECT_THROW(qscod_configure(0), ConfigError);
  EXPECT_THROW(qscod_configure(3, 2, 1), ConfigError);  // not full spread
  EXPECT_THROW(qscod_configure(3, 1, 2), ConfigError);
}

TEST(QscodSlots, RoundTrip) {
  History h0 = test::leaf(1, 5, "a");
  History h1 = History::extend(h0, Proposal{NodeId{2}, to_bytes("b"), Priority{9}, h0.digest()});
  auto s1 = decode_slot1(encode_slot1({h0, h1}));
  EXPECT_EQ(s1.prior, h0);
  EXPECT_EQ(s1.proposal, h1);
  EXPECT_THROW(decode_slot1(encode_slot1({History{}, h1})), DecodeError);

  Slot3 v;
  v.R.insert(NodeId{1}, Blob(h1.encode()));
  v.R.insert(NodeId{2}, Blob(h0.encode()));
  v.B.insert(NodeId{1}, Blob(h1.encode()));
  v.best = h1;
  auto back = decode_slot3(encode_slot3(v));
  EXPECT_EQ(back.R, v.R);
  EXPECT_EQ(back.B, v.B);
  EXPECT_EQ(back.best, h1);
  auto bytes = encode_slot3(v);
  bytes.push_back(0);
  EXPECT_THROW(decode_slot3(bytes), DecodeError);
}

TEST(ClientCache, WaitsForThresholdColumns) {
  ClientCache c(3);
  Key k{2, 1};
  auto fut = std::async(std::launch::async, [&] { return c.wait(k, 2, 5s); });
  c.put(NodeId{3}, k, to_bytes("c"));
  EXPECT_EQ(fut.wait_for(50ms), std::future_status::timeout);
  c.put(NodeId{1}, k, to_bytes("a"));
  auto got = fut.get();
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].first, NodeId{1});
  EXPECT_EQ(got[1].first, NodeId{3});
}

TEST(ClientCache, ReturnsImmediatelyWhenPresent) {
  ClientCache c(3);
  Key k{2, 3};
  for (std::uint32_t j = 1; j <= 3; ++j) c.put(NodeId{j}, k, to_bytes("v" + std::to_string(j)));
  auto got = c.wait(k, 2, 1ms);
  EXPECT_EQ(got.size(), 3u);
  EXPECT_EQ(c.get(NodeId{2}, k), to_bytes("v2"));
  EXPECT_FALSE(c.get(NodeId{2}, Key{2, 4}).has_value());
}

TEST(ClientCache, ValuesNeverChange) {
  ClientCache c(2);
  Key k{4, 2};
  c.put(NodeId{1}, k, to_bytes("x"));
  EXPECT_NO_THROW(c.put(NodeId{1}, k, to_bytes("x")));
  EXPECT_THROW(c.put(NodeId{1}, k, to_bytes("y")), ProtocolViolation);
  EXPECT_EQ(c.wait(k, 1, 1ms).size(), 1u);
}

TEST(ClientCache, WatchdogAndAbort) {
  ClientCache c(3);
  EXPECT_THROW(c.wait(Key{2, 1}, 1, 20ms), QscodStall);
  auto fut = std::async(std::launch::async, [&] { return c.wait(Key{2, 2}, 3, 5s); });
  std::this_thread::sleep_for(20ms);
  c.abort("stores gone");
  try {
    fut.get();
    FAIL();
  } catch (const QscodStall& e) {
    EXPECT_STREQ(e.what(), "stores gone");
  }
}

TEST(QscodClient, SingleClientCommitsEachMessageInOneRound) {
  Stores s(3);
  std::vector<std::string> got;
  QscodOptions opt;
  opt.client = 7;
  QscodClient c(qscod_configure(3), s.ptrs, opt, [&](const QscodDelivery& d) { got.push_back(text(d.history.head().message)); });
  for (const char* m : {"alpha", "beta", "gamma", "delta", "epsilon"}) c.submit(to_bytes(m));
  c.run();
  EXPECT_EQ(got, (std::vector<std::string>{"alpha", "beta", "gamma", "delta", "epsilon"}));
  auto st = c.stats();
  EXPECT_EQ(st.commits, 5u);
  EXPECT_EQ(st.lost_rounds, 0u);
  EXPECT_EQ(st.last_round, 6u);  // round 1 is fictitious
  EXPECT_EQ(st.store_ops, 4u * 3 * 5);
  EXPECT_EQ(c.pending(), 0u);
  ASSERT_EQ(c.deliveries().size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_EQ(c.deliveries()[k].round, k + 2);
    EXPECT_EQ(c.deliveries()[k].seq, k);
    EXPECT_EQ(c.deliveries()[k].history.length(), k + 1);
    EXPECT_EQ(c.deliveries()[k].history.head().proposer, NodeId{7});
  }
  EXPECT_TRUE(qscod_check({&c}).ok);
  for (std::uint64_t q = 2; q <= 6; ++q)
    for (std::uint32_t slot = 1; slot <= 4; ++slot)
      for (auto* st2 : s.ptrs) EXPECT_TRUE(st2->read({q, slot}).has_value());
  EXPECT_FALSE(s.ptrs[0]->read({7, 1}).has_value());
}

TEST(QscodClient, NothingSubmittedDoesNothing) {
  Stores s(3);
  QscodClient c(qscod_configure(3), s.ptrs);
  c.run();
  EXPECT_EQ(c.stats().store_ops, 0u);
}

TEST(QscodClient, NeedsOneStorePerNode) {
  Stores s(2);
  EXPECT_THROW(QscodClient(qscod_configure(3), s.ptrs), UsageError);
}

TEST(QscodClient, FixedRoundBudgetWithYieldProposals) {
  Stores s(3);
  QscodOptions opt;
  opt.client = 1;
  opt.max_round = 6;
  QscodClient c(qscod_configure(3), s.ptrs, opt);
  c.submit(to_bytes("only"));
  c.run();
  EXPECT_EQ(c.stats().commits, 1u);
  EXPECT_EQ(c.stats().last_round, 6u);
  // the rounds after the commit carried empty yield proposals
  auto s1 = decode_slot1(*s.ptrs[0]->read({6, 1}));
  EXPECT_TRUE(s1.proposal.head().message.empty());
  EXPECT_EQ(s1.proposal.head().priority.value, 0u);
}

TEST(QscodClient, ToleratesOneBrokenStore) {
  Stores s(3);
  BrokenStore broken;
  auto ptrs = s.ptrs;
  ptrs[1] = &broken;
  QscodOptions opt;
  opt.client = 2;
  opt.io_retries = 2;
  QscodClient c(qscod_configure(3), ptrs, opt);
  c.submit(to_bytes("m1"));
  c.submit(to_bytes("m2"));
  c.run();
  EXPECT_EQ(c.stats().commits, 2u);
}

TEST(QscodClient, TooManyBrokenStoresStall) {
  Stores s(3);
  BrokenStore b1, b2;
  QscodOptions opt;
  opt.client = 2;
  opt.io_retries = 2;
  opt.watchdog = 2s;
  QscodClient c(qscod_configure(3), {s.ptrs[0], &b1, &b2}, opt);
  c.submit(to_bytes("m"));
  try {
    c.run();
    FAIL();
  } catch (const QscodStall& e) {
    EXPECT_NE(std::string(e.what()).find("need t_r=2"), std::string::npos) << e.what();
  }
}

TEST(QscodClient, LaterClientCompletesAbandonedRound) {
  Stores s(3);
  QscodOptions a_opt;
  a_opt.client = 1;
  a_opt.halt_after = Key{3, 2};
  QscodClient a(qscod_configure(3), s.ptrs, a_opt);
  a.submit(to_bytes("a1"));
  a.submit(to_bytes("a2"));
  a.run();
  EXPECT_EQ(a.stats().commits, 1u);
  // the halt stops every driver: round 3 is left partially written
  std::size_t written = 0;
  for (auto* st : s.ptrs) {
    written += st->read({3, 2}).has_value();
    EXPECT_FALSE(st->read({3, 3}).has_value());
  }
  EXPECT_GE(written, 1u);

  QscodOptions b_opt;
  b_opt.client = 2;
  QscodClient b(qscod_configure(3), s.ptrs, b_opt);
  b.submit(to_bytes("b1"));
  b.run();
  EXPECT_EQ(b.stats().commits, 1u);
  for (auto* st : s.ptrs) EXPECT_TRUE(st->read({3, 4}).has_value());
  // b replayed round 2 and adopted a's committed history before its own
  const auto& d = b.deliveries().back();
  ASSERT_GE(d.history.length(), 2u);
  EXPECT_TRUE(is_prefix(a.deliveries().front().history, d.history, b.archive()));
  EXPECT_TRUE(qscod_check({&a, &b}).ok);
  for (std::uint64_t q = 2; q <= b.stats().last_round; ++q) {
    ValidationReport rep;
    replay_round(s.ptrs, q, 2, 2, &rep);
    EXPECT_TRUE(rep.ok) << q << ": " << rep.summary();
  }
}

TEST(QscodReplay, DualReplayIsIdentical) {
  Stores s(3);
  QscodOptions opt;
  opt.client = 3;
  QscodClient c(qscod_configure(3), s.ptrs, opt);
  for (int m = 0; m < 4; ++m) c.submit(to_bytes("m" + std::to_string(m)));
  c.run();
  for (std::uint64_t q = 2; q <= c.stats().last_round; ++q) {
    CountingStore c0(*s.ptrs[0]), c1(*s.ptrs[1]), c2(*s.ptrs[2]);
    auto first = encode_views(replay_round(s.ptrs, q, 2, 2));
    auto second = encode_views(replay_round({&c0, &c1, &c2}, q, 2, 2));
    EXPECT_EQ(first, second);
    ValidationReport rep;
    auto views = replay_round(s.ptrs, q, 2, 2, &rep);
    EXPECT_TRUE(rep.ok) << rep.summary();
    // the stored h'' is the best of the stored B1 at every node
    for (const auto& v : views) {
      ASSERT_TRUE(v.s3.has_value());
      EXPECT_EQ(best_in(histories_of(v.s3->B)), v.s3->best);
    }
  }
}

TEST(QscodReplay, DetectsForgedColumn) {
  Stores s(3);
  QscodClient c(qscod_configure(3), s.ptrs);
  c.submit(to_bytes("x"));
  c.run();
  // a store that claims a receive set naming a proposal nobody stored
  MemoryStore forged;
  History rogue = test::leaf(9, 1, "rogue");
  MessageSet fake;
  fake.insert(NodeId{1}, Blob(rogue.encode()));
  fake.insert(NodeId{2}, Blob(rogue.encode()));
  forged.write_once({2, 1}, *s.ptrs[2]->read({2, 1}));
  forged.write_once({2, 2}, fake.encode());
  ValidationReport rep;
  replay_round({s.ptrs[0], s.ptrs[1], &forged}, 2, 2, 2, &rep);
  EXPECT_FALSE(rep.ok);
}
