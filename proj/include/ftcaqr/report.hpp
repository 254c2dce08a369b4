#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ftcaqr/caqr.hpp"
#include "ftcaqr/verify.hpp"

namespace ftcaqr {

struct RecoveryRecord {
  Rank rank = 0;
  int panel = 0;
  Phase phase = Phase::None;
  int step = 0;
  Rank peer = 0;
};

/// Trace aggregates of one run. Every count is recomputed from the trace.
struct RunReport {
  Metrics metrics;
  std::size_t exchanges = 0;
  std::size_t sends = 0;
  std::size_t recvs = 0;
  std::size_t bytes_total = 0;
  std::vector<int> redundancy_by_step;  ///< panel 0: ranks sharing each rank's R~ after step s
  std::vector<int> active_by_step;      ///< panel 0: ranks taking part in trailing step s
  std::vector<RecoveryRecord> recoveries;
  std::uint64_t elapsed_clock = 0;      ///< logical clock at the end of the run
};

std::size_t count_events(const std::vector<TraceEvent>& trace, EventKind kind,
                         Phase phase = Phase::None);

/// Distinct ranks with message events in `phase` of `panel`, per step.
std::vector<int> active_by_step(const std::vector<TraceEvent>& trace, Phase phase, int panel,
                                int steps);

/// Smallest group of ranks holding a bitwise-identical R~ after each step,
/// among ranks that completed the step.
std::vector<int> redundancy_by_step(const PanelRecord& panel);

RunReport summarize(const FactorizationResult& result, const Metrics& metrics);

/// Run parameters echoed at the top of the report.
struct RunConfig {
  std::string command;
  std::size_t rows = 0, cols = 0, panel = 0;
  int ranks = 0;
  std::uint64_t seed = 0;
  Mode mode = Mode::FaultTolerant;
  Variant variant = Variant::Symmetric;
  std::vector<KillEvent> faults;
};

/// `key value` lines in a fixed order.
void write_report(std::ostream& os, const RunConfig& config, const RunReport& report);

}  // namespace ftcaqr
