#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ftcaqr/matrix.hpp"

namespace ftcaqr {

using Rank = int;

/// A message body: an ordered list of matrices.
using Packet = std::vector<Matrix>;

std::size_t byte_size(const Packet& p);

/// Sequential cursor over a packet's matrices.
class PacketReader {
 public:
  explicit PacketReader(const Packet& p) : packet_(&p) {}
  const Matrix& next();
  [[nodiscard]] bool done() const noexcept { return pos_ == packet_->size(); }

 private:
  const Packet* packet_;
  std::size_t pos_ = 0;
};

enum class Phase { None, Tsqr, Trailing };
enum class Point { BeforeExchange, AfterExchange };

std::string_view to_string(Phase p);
std::string_view to_string(Point p);
Phase parse_phase(std::string_view s);
Point parse_point(std::string_view s);

/// Kill `rank` when it reaches the declared fault point.
struct KillEvent {
  Rank rank = 0;
  int panel = 0;
  Phase phase = Phase::Tsqr;
  int step = 0;
  Point point = Point::BeforeExchange;

  friend bool operator==(const KillEvent&, const KillEvent&) = default;
};

/// `RANK@PHASE:PANEL:STEP:POINT`
KillEvent parse_kill_event(std::string_view spec);
std::string format_kill_event(const KillEvent& e);

struct FaultPlan {
  std::vector<KillEvent> events;

  /// Sorts events by (panel, phase, step, point, rank) and rejects
  /// constellations that leave a failed rank without a live partner.
  void validate(int ranks);
};

enum class EventKind { Send, Recv, Exchange, Compute, Fail, Respawn, Recover };
std::string_view to_string(EventKind k);

struct TraceEvent {
  std::uint64_t clock = 0;
  EventKind kind = EventKind::Compute;
  Rank rank = 0;
  std::optional<Rank> peer;
  int panel = -1;
  Phase phase = Phase::None;
  int step = -1;
  std::size_t bytes = 0;
  std::string tag;

  friend bool operator==(const TraceEvent&, const TraceEvent&) = default;
};

/// `clock kind rank peer panel phase step bytes payload_tag`, `-` for absent.
std::string format_trace_line(const TraceEvent& e);
void write_trace(std::ostream& os, const std::vector<TraceEvent>& trace);

/// Communication with a failed (or since-replaced) process.
class FailedPeer : public std::runtime_error {
 public:
  explicit FailedPeer(Rank peer);
  [[nodiscard]] Rank peer() const noexcept { return peer_; }

 private:
  Rank peer_;
};

/// Misuse of the fabric protocol (respawning a live rank, bad rank ids).
class ProtocolError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// No process can make progress while some have not finished.
class DeadlockError : public std::runtime_error {
 public:
  DeadlockError(std::string msg, std::vector<Rank> blocked);
  [[nodiscard]] const std::vector<Rank>& blocked() const noexcept { return blocked_; }

 private:
  std::vector<Rank> blocked_;
};

/// Answers a replacement's recovery request from rank-local state.
/// Returns nullopt while the data is not yet available.
using RecoveryHandler =
    std::function<std::optional<Packet>(Rank requester, const KillEvent& event)>;

class Fabric;

/// Per-process handle passed to the rank program.
class Comm {
 public:
  [[nodiscard]] Rank rank() const noexcept { return rank_; }
  [[nodiscard]] int size() const noexcept;
  [[nodiscard]] int incarnation() const;

  /// Set for a replacement process: the event that killed its predecessor.
  [[nodiscard]] std::optional<KillEvent> revived_from() const;

  /// Context stamped on subsequent trace events.
  void set_context(int panel, Phase phase, int step);

  void send(Rank dst, std::string_view tag, Packet payload);
  Packet recv(Rank src, std::string_view tag);
  /// Atomic pairwise exchange; one EXCHANGE event for the pair.
  Packet sendrecv(Rank peer, std::string_view tag, Packet payload);
  void compute(std::string_view tag);

  /// Dies here if the fault plan says so.
  void fault_point(int panel, Phase phase, int step, Point point);

  /// Manual REBUILD; only meaningful when automatic respawn is off.
  void respawn(Rank r);

  /// Replacement side: fetch recovery data from exactly one live process.
  Packet request_recovery(Rank helper);
  void set_recovery_handler(RecoveryHandler handler);

  /// Keep answering recovery requests until every process is done.
  void serve_until_done();

  /// Original input block, reloadable after respawn.
  [[nodiscard]] const Matrix& input() const;
  /// Rank-private stable storage that survives respawn.
  void commit(int slot, Matrix block);
  [[nodiscard]] Matrix load(int slot) const;

 private:
  friend class Fabric;
  Comm(Fabric* fabric, Rank rank) : fabric_(fabric), rank_(rank) {}
  Fabric* fabric_;
  Rank rank_;
};

using Program = std::function<void(Comm&)>;

struct RunOptions {
  /// REBUILD semantics: a killed process is replaced immediately.
  bool auto_respawn = true;
  /// Per-rank input blocks (may be empty).
  std::vector<Matrix> inputs;
};

struct Outcome {
  std::vector<TraceEvent> trace;
};

/// Execute `program` on `ranks` logical processes under `plan`.
///
/// Processes are threads that run one at a time; control changes hands
/// only at message boundaries, round-robin by rank, so the trace is a pure
/// function of (program, ranks, plan). Exceptions escaping a program abort
/// the run and are rethrown here.
Outcome run(const Program& program, int ranks, const FaultPlan& plan, RunOptions options = {});

}  // namespace ftcaqr
