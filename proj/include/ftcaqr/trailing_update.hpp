#pragma once

#include <optional>
#include <vector>

#include "ftcaqr/tsqr.hpp"

namespace ftcaqr {

/// What the fault-tolerant exchange carries.
///
/// Literal: the top member sends C0', the bottom member sends {C1', Y1}.
/// Symmetric: both send {C', Y1}, so every ledger holds Y1.
enum class Variant { Literal, Symmetric };

std::string_view to_string(Variant v);
std::string_view to_string(Mode m);

/// A rank's trailing rows after its local leaf update.
struct TrailingBlock {
  Matrix cprime;        ///< top `width` rows, still updated along the tree
  Matrix cdoubleprime;  ///< remaining rows, already final
};

/// Apply the leaf Q^T to `cfull` and split off the top `width` rows.
/// An empty leaf takes a 0-row block.
TrailingBlock leaf_update(const std::optional<QRFactor>& leaf, const Matrix& cfull,
                          std::size_t width);

/// One rank's record of one tree step.
struct LedgerEntry {
  Matrix c_low;               ///< C0' of the pair (top group)
  Matrix c_high;              ///< C1' of the pair (bottom group)
  Matrix W;                   ///< 0x0 when nothing was combined
  Matrix T;
  std::optional<Matrix> y1;   ///< Y1 as received from the peer
};

/// Outputs of a step: new top C0 (the merged group's C') and bottom C1.
struct StepOutputs {
  Matrix chat0;
  Matrix chat1;
};

/// Recompute a step from its ledger entry. `y1` is used when the entry
/// carries none.
StepOutputs replay(const LedgerEntry& e, const Matrix* y1);

/// Per-rank trailing update state for one panel.
struct TrailingState {
  Matrix cdoubleprime;
  Matrix group;                       ///< current top C' of this rank's group
  std::optional<Matrix> final_rows;   ///< set once this rank's top rows are final
  std::vector<LedgerEntry> ledger;    ///< FT mode only, by step

  [[nodiscard]] int completed() const { return static_cast<int>(ledger.size()); }
  /// The rank's updated top rows (the group value if never finalized).
  [[nodiscard]] const Matrix& top_rows() const { return final_rows ? *final_rows : group; }
};

TrailingState trailing_start(TrailingBlock block);

/// One step of the fault-tolerant update (one EXCHANGE with the step buddy).
void update_pair_ft(Comm& comm, TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree,
                    int panel, int step, Variant variant);

/// One step of the baseline update: the bottom member sends C1', the top
/// member returns {W, Y1}; only ranks still in the reduction take part.
/// Returns false once this rank has left the tree.
bool update_pair_baseline(Comm& comm, TrailingState& ts, const TsqrState& tsqr,
                          const TreeMap& tree, int panel, int step);

/// Run steps [first_step, steps) in the given mode.
void trailing_run(Comm& comm, TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree,
                  int panel, Mode mode, Variant variant, int first_step = 0);

/// Number of completed steps a replacement killed at `event` must restore.
int trailing_rejoin_step(const KillEvent& event);

/// Ledger entries [0, steps) as a recovery packet tail.
void append_ledger(Packet& out, const TrailingState& ts, int steps);

/// Helper side: ledger up to `steps`, or nullopt if not yet recorded.
std::optional<Packet> serve_trailing(const TrailingState& ts, int steps);

/// Replacement side: adopt the helper's ledger (identical to the lost one,
/// since the helper shares every pair from step 0 on) and replay it to
/// rebuild the group value and this rank's final rows.
void trailing_recover(TrailingState& ts, const TsqrState& tsqr, const TreeMap& tree, Rank me,
                      PacketReader& in, int steps);

}  // namespace ftcaqr
