#include <gtest/gtest.h>

#include <sstream>

#include "ftcaqr/fabric.hpp"

using namespace ftcaqr;

namespace {

std::vector<TraceEvent> of_kind(const std::vector<TraceEvent>& trace, EventKind k) {
  std::vector<TraceEvent> out;
  for (const auto& e : trace)
    if (e.kind == k) out.push_back(e);
  return out;
}

std::string trace_text(const std::vector<TraceEvent>& trace) {
  std::ostringstream os;
  write_trace(os, trace);
  return os.str();
}

Packet one(double v) { return {Matrix{{v}}}; }

}  // namespace

TEST(Fabric, TrivialProgramHasNoMessages) {
  const auto out = run([](Comm&) {}, 4, {});
  EXPECT_TRUE(out.trace.empty());
}

TEST(Fabric, PingPongOrder) {
  const auto out = run(
      [](Comm& c) {
        if (c.rank() == 0) {
          c.send(1, "ping", one(1.0));
          c.recv(1, "pong");
        } else {
          auto p = c.recv(0, "ping");
          c.send(0, "pong", std::move(p));
        }
      },
      2, {});
  ASSERT_EQ(out.trace.size(), 4u);
  const EventKind kinds[] = {EventKind::Send, EventKind::Recv, EventKind::Send, EventKind::Recv};
  const Rank ranks[] = {0, 1, 1, 0};
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(out.trace[i].kind, kinds[i]);
    EXPECT_EQ(out.trace[i].rank, ranks[i]);
    EXPECT_EQ(out.trace[i].clock, i);
  }
  EXPECT_EQ(*out.trace[0].peer, 1);
  EXPECT_EQ(*out.trace[2].peer, 0);
}

TEST(Fabric, PayloadBitsAndFifo) {
  const Matrix m{{1.0 / 3.0, -2.5}, {1e-300, 7.0}};
  std::vector<Matrix> got;
  run(
      [&](Comm& c) {
        if (c.rank() == 0) {
          c.send(1, "x", {m});
          c.send(1, "x", one(1));
          c.send(1, "x", one(2));
        } else {
          for (int i = 0; i < 3; ++i) got.push_back(c.recv(0, "x").at(0));
        }
      },
      2, {});
  ASSERT_EQ(got.size(), 3u);
  EXPECT_EQ(got[0], m);
  EXPECT_EQ(got[1], Matrix{{1.0}});
  EXPECT_EQ(got[2], Matrix{{2.0}});
}

TEST(Fabric, ExchangeSwapsValuesAndCountsOnce) {
  std::vector<double> seen(2);
  const auto out = run(
      [&](Comm& c) {
        const Rank peer = 1 - c.rank();
        auto p = c.sendrecv(peer, "swap", one(c.rank() == 0 ? 3.0 : 4.0));
        seen[c.rank()] = p.at(0)(0, 0);
      },
      2, {});
  EXPECT_EQ(seen[0], 4.0);
  EXPECT_EQ(seen[1], 3.0);
  const auto ex = of_kind(out.trace, EventKind::Exchange);
  ASSERT_EQ(ex.size(), 1u);
  EXPECT_EQ(ex[0].bytes, 16u);
  EXPECT_EQ(ex[0].rank, 0);
  EXPECT_EQ(*ex[0].peer, 1);
}

TEST(Fabric, ReExecutionGivesIdenticalTrace) {
  const Program prog = [](Comm& c) {
    for (int s = 0; s < 3; ++s) {
      c.set_context(0, Phase::Tsqr, s);
      const Rank peer = c.rank() ^ (1 << s);
      c.sendrecv(peer, "r", one(c.rank() + s));
      c.compute("combine");
    }
  };
  const auto a = run(prog, 8, {});
  const auto b = run(prog, 8, {});
  EXPECT_EQ(trace_text(a.trace), trace_text(b.trace));
  EXPECT_EQ(of_kind(a.trace, EventKind::Exchange).size(), 12u);
}

TEST(Fabric, RecvFromKilledRankFails) {
  FaultPlan plan{{KillEvent{1, 0, Phase::Tsqr, 0, Point::BeforeExchange}}};
  bool observed = false;
  run(
      [&](Comm& c) {
        if (c.rank() == 0) {
          try {
            c.recv(1, "x");
          } catch (const FailedPeer& e) {
            observed = e.peer() == 1;
          }
        } else if (!c.revived_from()) {
          c.fault_point(0, Phase::Tsqr, 0, Point::BeforeExchange);
          c.send(0, "x", one(1));
        }
      },
      2, plan);
  EXPECT_TRUE(observed);
}

TEST(Fabric, ExchangeWithKilledRankFailsThenReplacementJoins) {
  FaultPlan plan{{KillEvent{1, 0, Phase::Tsqr, 0, Point::BeforeExchange}}};
  int failures = 0;
  double received = 0.0;
  const auto out = run(
      [&](Comm& c) {
        if (c.rank() == 1) c.fault_point(0, Phase::Tsqr, 0, Point::BeforeExchange);
        while (true) {
          try {
            auto p = c.sendrecv(1 - c.rank(), "x", one(10.0 + c.rank()));
            if (c.rank() == 0) received = p.at(0)(0, 0);
            break;
          } catch (const FailedPeer&) {
            ++failures;
          }
        }
      },
      2, plan);
  EXPECT_EQ(failures, 1);
  EXPECT_EQ(received, 11.0);
  EXPECT_EQ(of_kind(out.trace, EventKind::Fail).size(), 1u);
  EXPECT_EQ(of_kind(out.trace, EventKind::Respawn).size(), 1u);
  EXPECT_EQ(of_kind(out.trace, EventKind::Exchange).size(), 1u);
}

TEST(Fabric, RespawnedRankHasFreshStateAndDurableInput) {
  FaultPlan plan{{KillEvent{2, 0, Phase::Trailing, 1, Point::AfterExchange}}};
  RunOptions opts;
  for (int r = 0; r < 4; ++r) opts.inputs.push_back(Matrix{{r * 1.5, 1.0 / (r + 1)}});
  std::vector<int> incarnations(4, -1);
  std::vector<Matrix> reloaded(4);
  std::optional<KillEvent> cause;
  run(
      [&](Comm& c) {
        int volatile_counter = 0;
        ++volatile_counter;
        if (c.rank() == 2 && !c.revived_from()) {
          volatile_counter = 99;
          c.fault_point(0, Phase::Trailing, 1, Point::AfterExchange);
        }
        if (c.rank() == 2) cause = c.revived_from();
        incarnations[c.rank()] = c.incarnation() * 100 + volatile_counter;
        reloaded[c.rank()] = c.input();
      },
      4, plan, opts);
  EXPECT_EQ(incarnations[2], 101);
  EXPECT_EQ(incarnations[0], 1);
  ASSERT_TRUE(cause.has_value());
  EXPECT_EQ(*cause, plan.events[0]);
  for (int r = 0; r < 4; ++r) EXPECT_EQ(reloaded[r], opts.inputs[r]);
}

TEST(Fabric, TwoSequentialFailuresBothRespawned) {
  FaultPlan plan{{KillEvent{1, 0, Phase::Tsqr, 0, Point::BeforeExchange},
                  KillEvent{3, 0, Phase::Tsqr, 1, Point::BeforeExchange}}};
  std::vector<bool> finished(4, false);
  const auto out = run(
      [&](Comm& c) {
        c.fault_point(0, Phase::Tsqr, 0, Point::BeforeExchange);
        c.fault_point(0, Phase::Tsqr, 1, Point::BeforeExchange);
        finished[c.rank()] = true;
      },
      4, plan);
  EXPECT_EQ(finished, std::vector<bool>(4, true));
  EXPECT_EQ(of_kind(out.trace, EventKind::Fail).size(), 2u);
  EXPECT_EQ(of_kind(out.trace, EventKind::Respawn).size(), 2u);
}

TEST(Fabric, ManualRespawnAndLiveRespawnError) {
  FaultPlan plan{{KillEvent{2, 0, Phase::Tsqr, 0, Point::BeforeExchange}}};
  RunOptions opts;
  opts.auto_respawn = false;
  bool live_rejected = false;
  bool rank2_back = false;
  run(
      [&](Comm& c) {
        if (c.rank() == 2) {
          if (!c.revived_from()) c.fault_point(0, Phase::Tsqr, 0, Point::BeforeExchange);
          rank2_back = c.incarnation() == 1;
          c.send(0, "hello", {});
        } else if (c.rank() == 0) {
          try {
            c.recv(2, "hello");
          } catch (const FailedPeer&) {
            c.respawn(2);
          }
          try {
            c.respawn(1);
          } catch (const ProtocolError&) {
            live_rejected = true;
          }
          c.recv(2, "hello");
        }
      },
      4, plan, opts);
  EXPECT_TRUE(rank2_back);
  EXPECT_TRUE(live_rejected);
}

TEST(Fabric, RecoveryRequestIsServedBySingleHelper) {
  FaultPlan plan{{KillEvent{1, 0, Phase::Tsqr, 0, Point::AfterExchange}}};
  Matrix restored;
  const auto out = run(
      [&](Comm& c) {
        Matrix state{{static_cast<double>(c.rank())}};
        c.set_recovery_handler([&state](Rank, const KillEvent&) -> std::optional<Packet> {
          return Packet{state};
        });
        if (auto ev = c.revived_from()) {
          restored = c.request_recovery(0).at(0);
        } else if (c.rank() == 1) {
          state = Matrix{{42.0}};
          c.fault_point(0, Phase::Tsqr, 0, Point::AfterExchange);
        }
        c.serve_until_done();
      },
      2, plan);
  EXPECT_EQ(restored, Matrix{{0.0}});
  const auto rec = of_kind(out.trace, EventKind::Recover);
  ASSERT_EQ(rec.size(), 1u);
  EXPECT_EQ(rec[0].rank, 1);
  EXPECT_EQ(*rec[0].peer, 0);
  EXPECT_EQ(rec[0].bytes, 8u);
  EXPECT_EQ(rec[0].panel, 0);
  EXPECT_EQ(rec[0].phase, Phase::Tsqr);
}

TEST(Fabric, DeadlockIsDiagnosed) {
  try {
    run([](Comm& c) { c.recv(1 - c.rank(), "never"); }, 2, {});
    FAIL() << "expected deadlock";
  } catch (const DeadlockError& e) {
    EXPECT_EQ(e.blocked(), (std::vector<Rank>{0, 1}));
  }
}

TEST(Fabric, ProgramExceptionsPropagate) {
  EXPECT_THROW(run(
                   [](Comm& c) {
                     if (c.rank() == 1) throw std::runtime_error("boom");
                     c.recv(1, "x");
                   },
                   2, {}),
               std::runtime_error);
}

TEST(Fabric, RejectsNonPowerOfTwo) {
  EXPECT_THROW(run([](Comm&) {}, 3, {}), InputError);
}

TEST(FaultPlan, ParseAndFormat) {
  const auto e = parse_kill_event("2@TSQR:0:1:BEFORE_EXCHANGE");
  EXPECT_EQ(e, (KillEvent{2, 0, Phase::Tsqr, 1, Point::BeforeExchange}));
  EXPECT_EQ(format_kill_event(e), "2@TSQR:0:1:BEFORE_EXCHANGE");
  EXPECT_THROW(parse_kill_event("2@TSQR:0:1"), InputError);
  EXPECT_THROW(parse_kill_event("x@TSQR:0:1:AFTER_EXCHANGE"), InputError);
  EXPECT_THROW(parse_kill_event("1@QR:0:1:AFTER_EXCHANGE"), InputError);
}

TEST(FaultPlan, ValidationSortsAndRejectsCollisions) {
  FaultPlan plan{{KillEvent{0, 1, Phase::Tsqr, 0, Point::BeforeExchange},
                  KillEvent{1, 0, Phase::Trailing, 0, Point::BeforeExchange}}};
  plan.validate(4);
  EXPECT_EQ(plan.events[0].panel, 0);
  FaultPlan clash{{KillEvent{0, 0, Phase::Tsqr, 1, Point::BeforeExchange},
                   KillEvent{2, 0, Phase::Tsqr, 1, Point::AfterExchange}}};
  EXPECT_THROW(clash.validate(4), InputError);
  FaultPlan out_of_range{{KillEvent{4, 0, Phase::Tsqr, 0, Point::BeforeExchange}}};
  EXPECT_THROW(out_of_range.validate(4), InputError);
}

TEST(Trace, LineFormat) {
  TraceEvent e{7, EventKind::Exchange, 0, 1, 2, Phase::Trailing, 1, 64, "C"};
  EXPECT_EQ(format_trace_line(e), "7 EXCHANGE 0 1 2 TRAILING 1 64 C");
  TraceEvent f{8, EventKind::Fail, 3, std::nullopt, 0, Phase::Tsqr, 0, 0, "BEFORE_EXCHANGE"};
  EXPECT_EQ(format_trace_line(f), "8 FAIL 3 - 0 TSQR 0 0 BEFORE_EXCHANGE");
}
