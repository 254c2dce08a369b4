#include "ftcaqr/caqr.hpp"

#include <bit>
#include <cstdlib>

#include <fmt/format.h>

namespace ftcaqr {

Distribution Distribution::make(std::size_t rows, std::size_t cols, std::size_t panel,
                                int ranks) {
  if (cols == 0 || rows < cols) {
    throw DimensionError(fmt::format("need rows >= cols >= 1, got {}x{}", rows, cols));
  }
  if (panel == 0 || cols % panel != 0) {
    throw DimensionError(fmt::format("panel width {} does not divide {} columns", panel, cols));
  }
  if (ranks < 1 || !std::has_single_bit(static_cast<unsigned>(ranks))) {
    throw InputError(fmt::format("rank count {} is not a power of two", ranks));
  }
  Distribution d{ranks, rows, cols, panel, {}};
  const std::size_t chunks = rows / panel;
  const std::size_t per = chunks / ranks;
  const std::size_t extra = chunks % ranks;
  std::size_t at = 0;
  Rank last_filled = 0;
  for (Rank r = 0; r < ranks; ++r) {
    const std::size_t n = (per + (static_cast<std::size_t>(r) < extra ? 1 : 0)) * panel;
    d.blocks.push_back({at, at + n});
    if (n > 0) last_filled = r;
    at += n;
  }
  // The remainder rows join the last non-empty block; later blocks shift.
  const std::size_t rem = rows - at;
  d.blocks[last_filled].end += rem;
  for (Rank r = last_filled + 1; r < ranks; ++r) d.blocks[r] = {rows, rows};
  return d;
}

RowRange Distribution::live(Rank rank, int k) const {
  const RowRange& b = blocks.at(rank);
  const std::size_t top = static_cast<std::size_t>(k) * panel;
  if (b.end <= top) return {b.end, b.end};
  return {std::max(b.begin, top), b.end};
}

TreeMap Distribution::tree(int k) const {
  for (Rank r = 0; r < ranks; ++r) {
    if (live(r, k).size() > 0) return TreeMap{ranks, r};
  }
  throw DimensionError(fmt::format("panel {} has no rows", k));
}

void validate_plan(FaultPlan& plan, const Distribution& dist) {
  plan.validate(dist.ranks);
  if (plan.events.empty()) return;
  const int steps = std::countr_zero(static_cast<unsigned>(dist.ranks));
  for (const auto& e : plan.events) {
    const std::string what = format_kill_event(e);
    if (e.panel >= dist.panels()) {
      throw InputError(fmt::format("{}: only {} panels", what, dist.panels()));
    }
    if (e.step >= steps) throw InputError(fmt::format("{}: only {} tree steps", what, steps));
    if (e.phase == Phase::Trailing && dist.trailing_cols(e.panel) == 0) {
      throw InputError(fmt::format("{}: the last panel has no trailing update", what));
    }
  }
  if (dist.ranks < 2) throw UnrecoverableFailure("a single rank has no buddy to recover from");
  for (std::size_t i = 0; i < plan.events.size(); ++i) {
    for (std::size_t j = i + 1; j < plan.events.size(); ++j) {
      const auto& a = plan.events[i];
      const auto& b = plan.events[j];
      if (a.rank == b.rank || std::abs(a.panel - b.panel) > 1) continue;
      for (int k : {a.panel, b.panel}) {
        if (dist.tree(k).partner(a.rank, 0) == b.rank) {
          throw UnrecoverableFailure(fmt::format(
              "{} and {} kill both holders of the same state", format_kill_event(a),
              format_kill_event(b)));
        }
      }
    }
  }
}

namespace {

struct PanelState {
  TsqrState tsqr;
  TrailingState trailing;
};

// Helper side of a recovery request for `ev`.
std::optional<Packet> serve(const std::vector<PanelState>& states, const TreeMap& tree,
                            const KillEvent& ev) {
  const PanelState& ps = states.at(ev.panel);
  const int r = tsqr_rejoin_step(ev);
  if (ev.phase == Phase::Tsqr) return serve_tsqr(ps.tsqr, r);
  if (ps.tsqr.completed() < tree.steps() || ps.trailing.completed() < r) return std::nullopt;
  Packet out;
  append_tsqr_history(out, ps.tsqr, tree.steps());
  append_ledger(out, ps.trailing, r);
  return out;
}

class RankProgram {
 public:
  RankProgram(const Distribution& dist, const FactorOptions& opts, FactorizationResult& result)
      : dist_(dist), opts_(opts), result_(result) {}

  void operator()(Comm& c) const {
    const Rank me = c.rank();
    const int panels = dist_.panels();
    const std::size_t b = dist_.panel;
    std::vector<PanelState> states(panels);
    c.set_recovery_handler([&](Rank, const KillEvent& ev) {
      return serve(states, dist_.tree(ev.panel), ev);
    });

    const auto revived = c.revived_from();
    const int first = revived ? revived->panel : 0;
    Matrix work = first == 0 ? c.input() : c.load(first);
    const std::size_t row0 = dist_.blocks[me].begin;

    for (int k = first; k < panels; ++k) {
      if (k > 0) c.commit(k, work);
      const TreeMap tree = dist_.tree(k);
      const RowRange live = dist_.live(me, k);
      const std::size_t lo = live.begin - row0;
      const std::size_t col = k * b;
      const std::size_t nt = dist_.trailing_cols(k);
      const Matrix panel_rows = work.block(lo, col, live.size(), b);
      PanelState& ps = states[k];
      const bool here = revived && revived->panel == k;

      std::optional<Packet> pkt;
      std::optional<PacketReader> in;
      if (here && revived->phase == Phase::Tsqr) {
        ps.tsqr = tsqr_recover(c, panel_rows, b, tree, *revived);
      } else {
        ps.tsqr = tsqr_leaf(panel_rows, b);
        if (here) {
          pkt = c.request_recovery(recovery_helper(me, tree));
          in.emplace(*pkt);
          restore_tsqr_history(ps.tsqr, *in, tree.steps());
        }
      }
      tsqr_run(c, ps.tsqr, tree, k, opts_.mode, ps.tsqr.completed());

      if (nt > 0) {
        const Matrix cfull = work.block(lo, col + b, live.size(), nt);
        ps.trailing = trailing_start(leaf_update(ps.tsqr.leaf, cfull, b));
        if (in) trailing_recover(ps.trailing, ps.tsqr, tree, me, *in, tsqr_rejoin_step(*revived));
        trailing_run(c, ps.trailing, ps.tsqr, tree, k, opts_.mode, opts_.variant,
                     ps.trailing.completed());
      }

      // Write the panel back: R11 on the diagonal owner, zeros below it.
      work.set_block(lo, col, Matrix(live.size(), b));
      if (live.size() > 0) {
        if (tree.to_virtual(me) == 0) work.set_block(lo, col, ps.tsqr.rtilde);
        if (nt > 0) {
          work.set_block(lo, col + b, ps.trailing.top_rows());
          work.set_block(lo + b, col + b, ps.trailing.cdoubleprime);
        }
      }
      result_.panels[k].tsqr[me] = ps.tsqr;
      result_.panels[k].trailing[me] = ps.trailing;
    }
    result_.blocks[me] = work;
    c.serve_until_done();
  }

 private:
  const Distribution& dist_;
  const FactorOptions& opts_;
  FactorizationResult& result_;
};

}  // namespace

FactorizationResult factor(const Matrix& a, const Distribution& dist,
                           const FactorOptions& options) {
  if (a.rows() != dist.rows || a.cols() != dist.cols) {
    throw DimensionError(fmt::format("matrix is {}x{}, distribution expects {}x{}", a.rows(),
                                     a.cols(), dist.rows, dist.cols));
  }
  a.require_finite("input matrix");
  FactorOptions opts = options;
  validate_plan(opts.plan, dist);

  FactorizationResult result;
  result.dist = dist;
  result.blocks.resize(dist.ranks);
  for (int k = 0; k < dist.panels(); ++k) {
    result.panels.push_back(
        {dist.tree(k), std::vector<TsqrState>(dist.ranks), std::vector<TrailingState>(dist.ranks)});
  }

  RunOptions run_opts;
  run_opts.auto_respawn = opts.mode == Mode::FaultTolerant;
  for (const auto& blk : dist.blocks) run_opts.inputs.push_back(a.block(blk.begin, 0, blk.size(), a.cols()));

  try {
    result.trace = run(RankProgram(dist, opts, result), dist.ranks, opts.plan, run_opts).trace;
  } catch (const FailedPeer& e) {
    throw UnrecoverableFailure(fmt::format("{} ({} mode keeps no redundant copy)", e.what(),
                                           to_string(opts.mode)));
  } catch (const DeadlockError& e) {
    throw UnrecoverableFailure(e.what());
  }

  Matrix full(0, dist.cols);
  for (const auto& blk : result.blocks) full = vstack(full, blk);
  result.R = full.block(0, 0, dist.cols, dist.cols);
  return result;
}

Matrix reconstruct_q(const FactorizationResult& result) {
  const Distribution& d = result.dist;
  const std::size_t b = d.panel;
  Matrix x(d.rows, d.cols);
  for (std::size_t i = 0; i < d.cols; ++i) x(i, i) = 1.0;

  for (int k = d.panels() - 1; k >= 0; --k) {
    const PanelRecord& rec = result.panels.at(k);
    const TreeMap& tree = rec.tree;
    for (int s = tree.steps() - 1; s >= 0; --s) {
      for (Rank va = 0; va < tree.ranks; va += 2 << s) {
        const Rank top = tree.to_physical(va);
        const Rank bottom = tree.to_physical(va + (1 << s));
        const auto& combines = rec.tsqr.at(top).combines;
        if (static_cast<int>(combines.size()) <= s) {
          throw InputError(fmt::format("panel {} lacks step {} on rank {}", k, s, top));
        }
        const auto& cf = combines[s];
        if (!cf) continue;
        const std::size_t ra = d.live(top, k).begin, rb = d.live(bottom, k).begin;
        const Matrix xa = x.block(ra, 0, b, d.cols);
        const Matrix xb = x.block(rb, 0, b, d.cols);
        const Matrix w = cf->T * (xa + transpose_times(cf->Y1, xb));
        x.set_block(ra, 0, xa - w);
        x.set_block(rb, 0, xb - cf->Y1 * w);
      }
    }
    for (Rank r = 0; r < d.ranks; ++r) {
      const auto& leaf = rec.tsqr.at(r).leaf;
      const RowRange live = d.live(r, k);
      if (!leaf) {
        if (live.size() > 0) throw InputError(fmt::format("panel {} lacks rank {}'s leaf", k, r));
        continue;
      }
      x.set_block(live.begin, 0, apply_q(*leaf, x.block(live.begin, 0, live.size(), d.cols)));
    }
  }
  return x;
}

}  // namespace ftcaqr
