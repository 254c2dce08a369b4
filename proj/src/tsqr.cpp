#include "ftcaqr/tsqr.hpp"

#include <bit>

#include <fmt/format.h>

namespace ftcaqr {

int TreeMap::steps() const { return std::countr_zero(static_cast<unsigned>(ranks)); }

Rank TreeMap::partner(Rank r, int step) const {
  return to_physical(buddy(to_virtual(r), step, ranks));
}

bool TreeMap::is_low(Rank r, int step) const { return (to_virtual(r) & (1 << step)) == 0; }

bool TreeMap::reduction_active(Rank r, int step) const {
  return (to_virtual(r) & ((1 << step) - 1)) == 0;
}

Rank buddy(Rank rank, int step, int ranks) {
  const int steps = std::countr_zero(static_cast<unsigned>(ranks));
  if (step < 0 || step >= steps) {
    throw InputError(fmt::format("buddy step {} outside [0,{})", step, steps));
  }
  if (rank < 0 || rank >= ranks) throw InputError(fmt::format("rank {} outside [0,{})", rank, ranks));
  return rank ^ (1 << step);
}

TsqrState tsqr_leaf(const Matrix& panel_rows, std::size_t width) {
  TsqrState st;
  if (panel_rows.rows() == 0) {
    st.rtilde = Matrix(0, width);
    return st;
  }
  st.leaf = householder_qr(panel_rows);
  st.rtilde = st.leaf->R;
  return st;
}

Packet exchange_with_retry(Comm& comm, Rank peer, std::string_view tag, Packet payload) {
  while (true) {
    try {
      return comm.sendrecv(peer, tag, payload);
    } catch (const FailedPeer&) {
      // The fabric has rebuilt the peer; it rejoins this exchange.
    }
  }
}

namespace {

// Combine the two group values of a pair. An empty side contributes nothing.
std::optional<CombineFactor> combine_pair(Comm& comm, const Matrix& r_low, const Matrix& r_high,
                                          Matrix& out) {
  if (r_high.rows() == 0) {
    out = r_low;
    return std::nullopt;
  }
  if (r_low.rows() == 0) {
    out = r_high;
    return std::nullopt;
  }
  comm.compute("combine");
  CombineFactor cf = combine_qr(r_low, r_high);
  out = cf.Rout;
  return cf;
}

void record(TsqrState& st, std::optional<CombineFactor> cf) {
  st.combines.push_back(std::move(cf));
  st.history.push_back(st.rtilde);
}

}  // namespace

void tsqr_run(Comm& comm, TsqrState& st, const TreeMap& tree, int panel, Mode mode,
              int first_step) {
  const Rank me = comm.rank();
  for (int s = first_step; s < tree.steps(); ++s) {
    comm.set_context(panel, Phase::Tsqr, s);
    comm.fault_point(panel, Phase::Tsqr, s, Point::BeforeExchange);
    const Rank peer = tree.partner(me, s);
    const bool low = tree.is_low(me, s);

    if (mode == Mode::FaultTolerant) {
      Packet got = exchange_with_retry(comm, peer, "R", {st.rtilde});
      const Matrix& theirs = got.at(0);
      Matrix next;
      auto cf = low ? combine_pair(comm, st.rtilde, theirs, next)
                    : combine_pair(comm, theirs, st.rtilde, next);
      st.rtilde = std::move(next);
      record(st, std::move(cf));
    } else if (tree.reduction_active(me, s)) {
      if (!low) {
        comm.send(peer, "R", {st.rtilde});
        comm.fault_point(panel, Phase::Tsqr, s, Point::AfterExchange);
        return;
      }
      Packet got = comm.recv(peer, "R");
      Matrix next;
      auto cf = combine_pair(comm, st.rtilde, got.at(0), next);
      st.rtilde = std::move(next);
      record(st, std::move(cf));
    } else {
      return;
    }
    comm.fault_point(panel, Phase::Tsqr, s, Point::AfterExchange);
  }
}

int tsqr_rejoin_step(const KillEvent& event) {
  return event.point == Point::BeforeExchange ? event.step : event.step + 1;
}

Rank recovery_helper(Rank failed, const TreeMap& tree) {
  if (tree.ranks < 2) throw ProtocolError("no recovery helper with a single rank");
  return tree.partner(failed, 0);
}

void append_tsqr_history(Packet& out, const TsqrState& st, int steps) {
  for (int s = 0; s < steps; ++s) {
    out.push_back(st.history.at(s));
    const auto& cf = st.combines.at(s);
    out.push_back(cf ? cf->Y1 : Matrix());
    out.push_back(cf ? cf->T : Matrix());
  }
}

void restore_tsqr_history(TsqrState& st, PacketReader& in, int steps) {
  st.history.clear();
  st.combines.clear();
  for (int s = 0; s < steps; ++s) {
    Matrix rt = in.next();
    const Matrix& y1 = in.next();
    const Matrix& t = in.next();
    if (y1.rows() > 0) {
      st.combines.push_back(CombineFactor{y1, t, rt});
    } else {
      st.combines.emplace_back(std::nullopt);
    }
    st.history.push_back(std::move(rt));
  }
  if (steps > 0) st.rtilde = st.history.back();
}

std::optional<Packet> serve_tsqr(const TsqrState& st, int steps) {
  if (st.completed() < steps) return std::nullopt;
  Packet out;
  append_tsqr_history(out, st, steps);
  return out;
}

TsqrState tsqr_recover(Comm& comm, const Matrix& panel_rows, std::size_t width,
                       const TreeMap& tree, const KillEvent& event) {
  TsqrState st = tsqr_leaf(panel_rows, width);
  const int steps = tsqr_rejoin_step(event);
  Packet got = comm.request_recovery(recovery_helper(comm.rank(), tree));
  PacketReader in(got);
  restore_tsqr_history(st, in, steps);
  return st;
}

void tsqr_allreduce(Comm& comm, const Matrix& block, TsqrState& state, int panel) {
  const TreeMap tree{comm.size(), 0};
  comm.set_recovery_handler([&state](Rank, const KillEvent& ev) {
    return serve_tsqr(state, tsqr_rejoin_step(ev));
  });
  const auto ev = comm.revived_from();
  if (ev && ev->phase == Phase::Tsqr && ev->panel == panel) {
    state = tsqr_recover(comm, block, block.cols(), tree, *ev);
  } else {
    state = tsqr_leaf(block, block.cols());
  }
  tsqr_run(comm, state, tree, panel, Mode::FaultTolerant, state.completed());
}

}  // namespace ftcaqr
