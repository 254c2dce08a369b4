#include <gtest/gtest.h>

#include <sstream>

#include "ftcaqr/report.hpp"

using namespace ftcaqr;

namespace {

FactorizationResult run_case(Mode mode, FaultPlan plan = {}) {
  const Matrix a = random_matrix(32, 16, 7);
  return factor(a, Distribution::make(32, 16, 4, 4), {mode, Variant::Symmetric, std::move(plan)});
}

}  // namespace

// Per panel: TSQR (P/2)log2P = 4 exchanges, trailing 4 more except on the last panel.
TEST(Report, FaultTolerantCounts) {
  const auto res = run_case(Mode::FaultTolerant);
  const auto r = summarize(res, {});
  EXPECT_EQ(r.exchanges, 4u * 4 + 3u * 4);
  EXPECT_EQ(r.sends, 0u);
  EXPECT_EQ(r.recvs, 0u);
  EXPECT_EQ(r.redundancy_by_step, (std::vector<int>{2, 4}));
  EXPECT_EQ(r.active_by_step, (std::vector<int>{4, 4}));
  EXPECT_TRUE(r.recoveries.empty());
  EXPECT_EQ(r.elapsed_clock, res.trace.back().clock + 1);
}

// Per panel: TSQR P-1 = 3 sends, trailing 2(P-1) = 6 except on the last panel.
TEST(Report, BaselineCounts) {
  const auto r = summarize(run_case(Mode::Baseline), {});
  EXPECT_EQ(r.exchanges, 0u);
  EXPECT_EQ(r.sends, 4u * 3 + 3u * 6);
  EXPECT_EQ(r.recvs, r.sends);
  EXPECT_EQ(r.redundancy_by_step, (std::vector<int>{1, 1}));
  EXPECT_EQ(r.active_by_step, (std::vector<int>{4, 2}));
}

TEST(Report, BytesMatchTrace) {
  const auto res = run_case(Mode::FaultTolerant);
  std::size_t bytes = 0;
  for (const auto& e : res.trace) bytes += e.kind == EventKind::Exchange ? e.bytes : 0;
  EXPECT_EQ(summarize(res, {}).bytes_total, bytes);
  // TSQR step exchanges two 4x4 triangles stored densely.
  EXPECT_EQ(res.trace.front().bytes, 2u * 16 * 8);
}

TEST(Report, RecoveryListed) {
  const KillEvent ev{2, 1, Phase::Trailing, 0, Point::AfterExchange};
  const auto r = summarize(run_case(Mode::FaultTolerant, {{ev}}), {});
  ASSERT_EQ(r.recoveries.size(), 1u);
  EXPECT_EQ(r.recoveries[0].rank, 2);
  EXPECT_EQ(r.recoveries[0].peer, 3);
  EXPECT_EQ(r.recoveries[0].panel, 1);
  EXPECT_EQ(r.recoveries[0].phase, Phase::Trailing);
}

TEST(Report, ActiveByStepFromSyntheticTrace) {
  std::vector<TraceEvent> t;
  t.push_back({0, EventKind::Send, 0, 1, 0, Phase::Trailing, 0, 8, "C"});
  t.push_back({1, EventKind::Exchange, 2, 3, 0, Phase::Trailing, 0, 8, "C"});
  t.push_back({2, EventKind::Compute, 5, std::nullopt, 0, Phase::Trailing, 1, 0, "update"});
  t.push_back({3, EventKind::Recv, 0, 2, 0, Phase::Trailing, 1, 8, "C"});
  t.push_back({4, EventKind::Send, 0, 2, 1, Phase::Trailing, 1, 8, "C"});
  EXPECT_EQ(active_by_step(t, Phase::Trailing, 0, 2), (std::vector<int>{4, 2}));
  EXPECT_EQ(count_events(t, EventKind::Send), 2u);
  EXPECT_EQ(count_events(t, EventKind::Send, Phase::Tsqr), 0u);
}

TEST(Report, FileLayout) {
  RunConfig cfg{"inject", 32, 16, 4, 4, 7, Mode::FaultTolerant, Variant::Literal,
                {KillEvent{1, 0, Phase::Tsqr, 1, Point::BeforeExchange}}};
  RunReport r;
  r.metrics.backward_error = 1.5e-16;
  r.exchanges = 28;
  r.redundancy_by_step = {2, 4};
  r.recoveries.push_back({1, 0, Phase::Tsqr, 1, 0});
  r.elapsed_clock = 99;
  std::ostringstream os;
  write_report(os, cfg, r);
  const std::string want =
      "command inject\nrows 32\ncols 16\npanel 4\nranks 4\nseed 7\nmode ft\nvariant literal\n"
      "faults 1\nfault.0 1@TSQR:0:1:BEFORE_EXCHANGE\nbackward_error 1.500000e-16\n"
      "orthogonality 0.000000e+00\ntriangularity 0.000000e+00\nmax_diff 0.000000e+00\n"
      "exchanges 28\nsends 0\nrecvs 0\nbytes_total 0\nredundancy_by_step 2,4\n"
      "active_by_step -\nrecoveries 1\nrecovery.0 rank=1 panel=0 phase=TSQR step=1 peer=0\n"
      "elapsed_clock 99\n";
  EXPECT_EQ(os.str(), want);
}
