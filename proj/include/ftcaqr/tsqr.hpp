#pragma once

#include <optional>
#include <vector>

#include "ftcaqr/dense_kernels.hpp"
#include "ftcaqr/fabric.hpp"

namespace ftcaqr {

enum class Mode { Baseline, FaultTolerant };

/// Placement of one panel's reduction tree on the physical ranks.
///
/// Ranks are rotated so that the first rank owning rows of the panel is
/// virtual rank 0; ranks with no live rows then occupy the top of the
/// virtual range and act as empty leaves.
struct TreeMap {
  int ranks = 1;
  int offset = 0;

  [[nodiscard]] int steps() const;
  [[nodiscard]] Rank to_virtual(Rank r) const { return (r - offset + ranks) % ranks; }
  [[nodiscard]] Rank to_physical(Rank v) const { return (v + offset) % ranks; }
  /// Physical partner of `r` at `step`.
  [[nodiscard]] Rank partner(Rank r, int step) const;
  /// True if `r` is the top (lower virtual index) member of its pair at `step`.
  [[nodiscard]] bool is_low(Rank r, int step) const;
  /// True if `r` still takes part in a non-redundant reduction at `step`.
  [[nodiscard]] bool reduction_active(Rank r, int step) const;
};

/// Exchange partner: rank XOR 2^step.
Rank buddy(Rank rank, int step, int ranks);

/// Per-rank TSQR state. An empty leaf (rank owns no panel rows) has
/// `leaf == nullopt` and a 0-row rtilde.
struct TsqrState {
  std::optional<QRFactor> leaf;
  Matrix rtilde;
  std::vector<std::optional<CombineFactor>> combines;  ///< by step; nullopt = nothing combined
  std::vector<Matrix> history;                         ///< rtilde after each completed step
  [[nodiscard]] int completed() const { return static_cast<int>(history.size()); }
};

/// Local leaf QR of the rank's panel rows (0 rows -> empty leaf).
TsqrState tsqr_leaf(const Matrix& panel_rows, std::size_t width);

/// sendrecv that retries after a peer failure; the replacement rejoins the
/// same exchange.
Packet exchange_with_retry(Comm& comm, Rank peer, std::string_view tag, Packet payload);

/// Run TSQR steps [first_step, steps) for one panel.
///
/// FaultTolerant: all-reduce; both buddies exchange rtilde and compute the
/// same combine, so the holders of each rtilde double every step.
/// Baseline: plain reduction; the high member sends and drops out.
void tsqr_run(Comm& comm, TsqrState& state, const TreeMap& tree, int panel, Mode mode,
              int first_step = 0);

/// Fault-tolerant TSQR of `block` over all ranks of `comm` (single panel).
/// Registers a recovery handler that reads `state`, so `state` must outlive
/// the caller's serve_until_done().
void tsqr_allreduce(Comm& comm, const Matrix& block, TsqrState& state, int panel = 0);

/// Number of completed steps a replacement killed at `event` must restore.
int tsqr_rejoin_step(const KillEvent& event);

/// The one process a replacement asks for its state.
Rank recovery_helper(Rank failed, const TreeMap& tree);

/// First `steps` steps of history, for a recovery packet.
void append_tsqr_history(Packet& out, const TsqrState& state, int steps);

/// Rebuild the state of a replacement from its recomputed leaf and a
/// helper's history.
void restore_tsqr_history(TsqrState& state, PacketReader& in, int steps);

/// Helper side: history up to `steps`, or nullopt if not yet computed.
std::optional<Packet> serve_tsqr(const TsqrState& state, int steps);

/// Replacement side for a failure inside the TSQR phase: recompute the
/// leaf from `panel_rows`, fetch the rest from exactly one helper. Returns
/// the state positioned at the rejoin step (== completed()).
TsqrState tsqr_recover(Comm& comm, const Matrix& panel_rows, std::size_t width,
                       const TreeMap& tree, const KillEvent& event);

}  // namespace ftcaqr
