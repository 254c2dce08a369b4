#include "ftcaqr/trailing_update.hpp"

#include <fmt/format.h>

namespace ftcaqr {

std::string_view to_string(Variant v) { return v == Variant::Literal ? "literal" : "symmetric"; }

std::string_view to_string(Mode m) { return m == Mode::Baseline ? "baseline" : "ft"; }

TrailingBlock leaf_update(const std::optional<QRFactor>& leaf, const Matrix& cfull,
                          std::size_t width) {
  const std::size_t nt = cfull.cols();
  if (!leaf) {
    if (cfull.rows() != 0) throw DimensionError("empty leaf with a non-empty trailing block");
    return {Matrix(0, nt), Matrix(0, nt)};
  }
  if (cfull.rows() != leaf->Y.rows() || width > cfull.rows()) {
    throw DimensionError(fmt::format("trailing block has {} rows, leaf has {}", cfull.rows(),
                                     leaf->Y.rows()));
  }
  const Matrix c = apply_qt(*leaf, cfull);
  return {c.block(0, 0, width, nt), c.block(width, 0, c.rows() - width, nt)};
}

StepOutputs replay(const LedgerEntry& e, const Matrix* y1) {
  if (e.W.rows() == 0) {
    // Nothing combined: the bottom group is empty and the top carries over.
    if (e.c_high.rows() != 0 && e.c_low.rows() != 0) {
      throw ProtocolError("ledger entry without W for two non-empty groups");
    }
    return {e.c_high.rows() == 0 ? e.c_low : e.c_high, Matrix(0, e.c_low.cols())};
  }
  const Matrix* y = e.y1 ? &*e.y1 : y1;
  if (y == nullptr) throw ProtocolError("ledger entry needs Y1 but none is available");
  return {update_top(e.c_low, e.W), update_bottom(e.c_high, *y, e.W)};
}

TrailingState trailing_start(TrailingBlock block) {
  TrailingState ts;
  ts.cdoubleprime = std::move(block.cdoubleprime);
  ts.group = std::move(block.cprime);
  return ts;
}

namespace {

// Fold one replayed step into the rank's state.
void absorb(TrailingState& ts, const StepOutputs& out, const TreeMap& tree, Rank me, int step) {
  ts.group = out.chat0;
  if (!tree.is_low(me, step) && tree.reduction_active(me, step)) ts.final_rows = out.chat1;
}

}  // namespace

void update_pair_ft(Comm& comm, TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree,
                    int panel, int step, Variant variant) {
  const Rank me = comm.rank();
  comm.set_context(panel, Phase::Trailing, step);
  comm.fault_point(panel, Phase::Trailing, step, Point::BeforeExchange);
  const Rank peer = tree.partner(me, step);
  const bool low = tree.is_low(me, step);
  const auto& cf = tsqr.combines.at(step);

  Packet payload{ts.group};
  if (variant == Variant::Symmetric || !low) payload.push_back(cf ? cf->Y1 : Matrix());
  Packet got = exchange_with_retry(comm, peer, "C", std::move(payload));

  LedgerEntry e;
  e.c_low = low ? ts.group : got.at(0);
  e.c_high = low ? got.at(0) : ts.group;
  if (got.size() > 1 && got[1].rows() > 0) e.y1 = got[1];
  if (cf) {
    comm.compute("update");
    e.W = compute_w(e.c_low, e.c_high, *cf);
    e.T = cf->T;
  }
  absorb(ts, replay(e, cf ? &cf->Y1 : nullptr), tree, me, step);
  ts.ledger.push_back(std::move(e));
  comm.fault_point(panel, Phase::Trailing, step, Point::AfterExchange);
}

bool update_pair_baseline(Comm& comm, TrailingState& ts, const TsqrState& tsqr,
                          const TreeMap& tree, int panel, int step) {
  const Rank me = comm.rank();
  if (!tree.reduction_active(me, step)) return false;
  comm.set_context(panel, Phase::Trailing, step);
  comm.fault_point(panel, Phase::Trailing, step, Point::BeforeExchange);
  const Rank peer = tree.partner(me, step);

  if (!tree.is_low(me, step)) {
    comm.send(peer, "C", {ts.group});
    Packet got = comm.recv(peer, "W");
    const Matrix& w = got.at(0);
    ts.final_rows = w.rows() == 0 ? ts.group : update_bottom(ts.group, got.at(1), w);
    comm.fault_point(panel, Phase::Trailing, step, Point::AfterExchange);
    return false;
  }

  Packet got = comm.recv(peer, "C");
  const auto& cf = tsqr.combines.at(step);
  if (cf) {
    comm.compute("update");
    Matrix w = compute_w(ts.group, got.at(0), *cf);
    comm.send(peer, "W", {w, cf->Y1});
    ts.group = update_top(ts.group, w);
  } else {
    comm.send(peer, "W", {Matrix(), Matrix()});
  }
  comm.fault_point(panel, Phase::Trailing, step, Point::AfterExchange);
  return true;
}

void trailing_run(Comm& comm, TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree,
                  int panel, Mode mode, Variant variant, int first_step) {
  for (int s = first_step; s < tree.steps(); ++s) {
    if (mode == Mode::FaultTolerant) {
      update_pair_ft(comm, ts, tsqr, tree, panel, s, variant);
    } else if (!update_pair_baseline(comm, ts, tsqr, tree, panel, s)) {
      return;
    }
  }
}

int trailing_rejoin_step(const KillEvent& event) { return tsqr_rejoin_step(event); }

void append_ledger(Packet& out, const TrailingState& ts, int steps) {
  if (steps > ts.completed()) {
    throw ProtocolError(fmt::format("ledger holds {} steps, {} requested", ts.completed(), steps));
  }
  for (int s = 0; s < steps; ++s) {
    const auto& e = ts.ledger[s];
    out.push_back(e.c_low);
    out.push_back(e.c_high);
    out.push_back(e.W);
    out.push_back(e.T);
    out.push_back(e.y1 ? *e.y1 : Matrix());
  }
}

std::optional<Packet> serve_trailing(const TrailingState& ts, int steps) {
  if (ts.completed() < steps) return std::nullopt;
  Packet out;
  append_ledger(out, ts, steps);
  return out;
}

void trailing_recover(TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree, Rank me,
                      PacketReader& in, int steps) {
  ts.ledger.clear();
  ts.final_rows.reset();
  for (int s = 0; s < steps; ++s) {
    LedgerEntry e;
    e.c_low = in.next();
    e.c_high = in.next();
    e.W = in.next();
    e.T = in.next();
    if (const Matrix& y = in.next(); y.rows() > 0) e.y1 = y;
    const auto& cf = tsqr.combines.at(s);
    if (cf.has_value() != (e.W.rows() > 0) || (cf && !(cf->T == e.T))) {
      throw ProtocolError(fmt::format("recovery packet does not match step {}", s));
    }
    absorb(ts, replay(e, cf ? &cf->Y1 : nullptr), tree, me, s);
    ts.ledger.push_back(std::move(e));
  }
}

}  // namespace ftcaqr
