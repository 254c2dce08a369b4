#pragma once

#include <stdexcept>
#include <vector>

#include "ftcaqr/trailing_update.hpp"

namespace ftcaqr {

/// The run cannot continue: a failure without redundancy, or a plan that
/// kills both holders of some state.
class UnrecoverableFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Row range [begin, end) in global row numbering.
struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  [[nodiscard]] std::size_t size() const { return end - begin; }
};

/// One-dimensional row-block layout with column panels of width `panel`.
///
/// Blocks are whole multiples of the panel width (the last non-empty rank
/// also takes the remainder), so a rank's live rows for any panel number
/// either zero or at least `panel`.
struct Distribution {
  int ranks = 1;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t panel = 1;
  std::vector<RowRange> blocks;

  static Distribution make(std::size_t rows, std::size_t cols, std::size_t panel, int ranks);

  [[nodiscard]] int panels() const { return static_cast<int>(cols / panel); }
  [[nodiscard]] std::size_t trailing_cols(int k) const { return cols - (k + 1) * panel; }
  /// Rows of `rank` at or below the diagonal of panel `k`.
  [[nodiscard]] RowRange live(Rank rank, int k) const;
  /// Tree for panel `k`, rooted at the rank holding the panel's diagonal.
  [[nodiscard]] TreeMap tree(int k) const;
};

struct FactorOptions {
  Mode mode = Mode::FaultTolerant;
  Variant variant = Variant::Symmetric;
  FaultPlan plan;
};

/// Per-panel state as left by each rank (taken from whichever incarnation
/// finished the panel).
struct PanelRecord {
  TreeMap tree;
  std::vector<TsqrState> tsqr;
  std::vector<TrailingState> trailing;
};

struct FactorizationResult {
  Distribution dist;
  Matrix R;                    ///< n x n upper triangular
  std::vector<Matrix> blocks;  ///< each rank's final rows, [R; 0] when stacked
  std::vector<PanelRecord> panels;
  std::vector<TraceEvent> trace;
};

/// Reject plans the driver cannot honour: points that are never reached,
/// failures on a single rank, and failures of two step-0 buddies in the
/// same or adjacent panels (the second would need the first's lost state).
void validate_plan(FaultPlan& plan, const Distribution& dist);

/// Distributed CAQR of `a` over the simulated fabric.
FactorizationResult factor(const Matrix& a, const Distribution& dist,
                           const FactorOptions& options = {});

/// Explicit thin Q (m x n) from the recorded reflector history.
Matrix reconstruct_q(const FactorizationResult& result);

}  // namespace ftcaqr
