#include "ftcaqr/report.hpp"

#include <bit>
#include <ostream>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

namespace ftcaqr {

std::size_t count_events(const std::vector<TraceEvent>& trace, EventKind kind, Phase phase) {
  std::size_t n = 0;
  for (const auto& e : trace) n += e.kind == kind && (phase == Phase::None || e.phase == phase);
  return n;
}

std::vector<int> active_by_step(const std::vector<TraceEvent>& trace, Phase phase, int panel,
                                int steps) {
  std::vector<std::set<Rank>> ranks(steps);
  for (const auto& e : trace) {
    const bool message = e.kind == EventKind::Send || e.kind == EventKind::Recv ||
                         e.kind == EventKind::Exchange;
    if (!message || e.phase != phase || e.panel != panel || e.step < 0 || e.step >= steps) continue;
    ranks[e.step].insert(e.rank);
    if (e.peer) ranks[e.step].insert(*e.peer);
  }
  std::vector<int> out;
  for (const auto& s : ranks) out.push_back(static_cast<int>(s.size()));
  return out;
}

std::vector<int> redundancy_by_step(const PanelRecord& panel) {
  std::vector<int> out;
  const auto& st = panel.tsqr;
  for (int s = 0; s < panel.tree.steps(); ++s) {
    int smallest = 0;
    for (const auto& a : st) {
      if (a.completed() <= s) continue;
      int same = 0;
      for (const auto& b : st) same += b.completed() > s && b.history[s] == a.history[s];
      smallest = smallest == 0 ? same : std::min(smallest, same);
    }
    out.push_back(smallest);
  }
  return out;
}

RunReport summarize(const FactorizationResult& result, const Metrics& metrics) {
  RunReport r;
  const auto& t = result.trace;
  r.metrics = metrics;
  r.exchanges = count_events(t, EventKind::Exchange);
  r.sends = count_events(t, EventKind::Send);
  r.recvs = count_events(t, EventKind::Recv);
  for (const auto& e : t) {
    if (e.kind == EventKind::Send || e.kind == EventKind::Exchange) r.bytes_total += e.bytes;
    if (e.kind == EventKind::Recover) r.recoveries.push_back({e.rank, e.panel, e.phase, e.step, *e.peer});
  }
  if (!result.panels.empty()) {
    r.redundancy_by_step = redundancy_by_step(result.panels[0]);
    if (result.dist.trailing_cols(0) > 0) {
      r.active_by_step = active_by_step(t, Phase::Trailing, 0, result.panels[0].tree.steps());
    }
  }
  r.elapsed_clock = t.empty() ? 0 : t.back().clock + 1;
  return r;
}

namespace {

std::string list(const std::vector<int>& v) {
  return v.empty() ? "-" : fmt::format("{}", fmt::join(v, ","));
}

}  // namespace

void write_report(std::ostream& os, const RunConfig& c, const RunReport& r) {
  auto line = [&os](std::string_view key, const auto& value) {
    os << fmt::format("{} {}\n", key, value);
  };
  line("command", c.command);
  line("rows", c.rows);
  line("cols", c.cols);
  line("panel", c.panel);
  line("ranks", c.ranks);
  line("seed", c.seed);
  line("mode", to_string(c.mode));
  line("variant", to_string(c.variant));
  line("faults", c.faults.size());
  for (std::size_t i = 0; i < c.faults.size(); ++i) {
    line(fmt::format("fault.{}", i), format_kill_event(c.faults[i]));
  }
  line("backward_error", fmt::format("{:.6e}", r.metrics.backward_error));
  line("orthogonality", fmt::format("{:.6e}", r.metrics.orthogonality));
  line("triangularity", fmt::format("{:.6e}", r.metrics.triangularity));
  line("max_diff", fmt::format("{:.6e}", r.metrics.max_diff));
  line("exchanges", r.exchanges);
  line("sends", r.sends);
  line("recvs", r.recvs);
  line("bytes_total", r.bytes_total);
  line("redundancy_by_step", list(r.redundancy_by_step));
  line("active_by_step", list(r.active_by_step));
  line("recoveries", r.recoveries.size());
  for (std::size_t i = 0; i < r.recoveries.size(); ++i) {
    const auto& x = r.recoveries[i];
    line(fmt::format("recovery.{}", i), fmt::format("rank={} panel={} phase={} step={} peer={}",
                                                    x.rank, x.panel, to_string(x.phase), x.step,
                                                    x.peer));
  }
  line("elapsed_clock", r.elapsed_clock);
}

}  // namespace ftcaqr
