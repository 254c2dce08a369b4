#include "ftcaqr/fabric.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <exception>
#include <map>
#include <mutex>
#include <ostream>
#include <thread>
#include <tuple>

#include <fmt/format.h>

namespace ftcaqr {

std::size_t byte_size(const Packet& p) {
  std::size_t b = 0;
  for (const auto& m : p) b += byte_size(m);
  return b;
}

const Matrix& PacketReader::next() {
  if (pos_ >= packet_->size()) throw ProtocolError("packet exhausted");
  return (*packet_)[pos_++];
}

std::string_view to_string(Phase p) {
  switch (p) {
    case Phase::None: return "NONE";
    case Phase::Tsqr: return "TSQR";
    case Phase::Trailing: return "TRAILING";
  }
  return "?";
}

std::string_view to_string(Point p) {
  return p == Point::BeforeExchange ? "BEFORE_EXCHANGE" : "AFTER_EXCHANGE";
}

std::string_view to_string(EventKind k) {
  switch (k) {
    case EventKind::Send: return "SEND";
    case EventKind::Recv: return "RECV";
    case EventKind::Exchange: return "EXCHANGE";
    case EventKind::Compute: return "COMPUTE";
    case EventKind::Fail: return "FAIL";
    case EventKind::Respawn: return "RESPAWN";
    case EventKind::Recover: return "RECOVER";
  }
  return "?";
}

Phase parse_phase(std::string_view s) {
  if (s == "TSQR") return Phase::Tsqr;
  if (s == "TRAILING") return Phase::Trailing;
  throw InputError(fmt::format("unknown phase '{}'", s));
}

Point parse_point(std::string_view s) {
  if (s == "BEFORE_EXCHANGE") return Point::BeforeExchange;
  if (s == "AFTER_EXCHANGE") return Point::AfterExchange;
  throw InputError(fmt::format("unknown fault point '{}'", s));
}

namespace {
int parse_index(std::string_view s, std::string_view what) {
  if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](char c) {
        return c >= '0' && c <= '9';
      })) {
    throw InputError(fmt::format("bad {} '{}' in fault spec", what, s));
  }
  return std::stoi(std::string(s));
}
}  // namespace

KillEvent parse_kill_event(std::string_view spec) {
  const auto at = spec.find('@');
  if (at == std::string_view::npos) throw InputError(fmt::format("fault spec '{}' lacks '@'", spec));
  KillEvent e;
  e.rank = parse_index(spec.substr(0, at), "rank");
  std::vector<std::string_view> parts;
  std::string_view rest = spec.substr(at + 1);
  while (true) {
    const auto c = rest.find(':');
    parts.push_back(rest.substr(0, c));
    if (c == std::string_view::npos) break;
    rest = rest.substr(c + 1);
  }
  if (parts.size() != 4) {
    throw InputError(fmt::format("fault spec '{}' is not RANK@PHASE:PANEL:STEP:POINT", spec));
  }
  e.phase = parse_phase(parts[0]);
  e.panel = parse_index(parts[1], "panel");
  e.step = parse_index(parts[2], "step");
  e.point = parse_point(parts[3]);
  return e;
}

std::string format_kill_event(const KillEvent& e) {
  return fmt::format("{}@{}:{}:{}:{}", e.rank, to_string(e.phase), e.panel, e.step,
                     to_string(e.point));
}

void FaultPlan::validate(int ranks) {
  for (const auto& e : events) {
    if (e.rank < 0 || e.rank >= ranks) {
      throw InputError(fmt::format("fault {} names a rank outside [0,{})", format_kill_event(e), ranks));
    }
    if (e.phase == Phase::None || e.panel < 0 || e.step < 0) {
      throw InputError(fmt::format("fault {} is malformed", format_kill_event(e)));
    }
  }
  std::stable_sort(events.begin(), events.end(), [](const KillEvent& a, const KillEvent& b) {
    return std::tie(a.panel, a.phase, a.step, a.point, a.rank) <
           std::tie(b.panel, b.phase, b.step, b.point, b.rank);
  });
  // One failure per (panel, phase, step): the recovering rank's partner and
  // helper must both be alive at that step.
  for (std::size_t i = 1; i < events.size(); ++i) {
    const auto& a = events[i - 1];
    const auto& b = events[i];
    if (a.panel == b.panel && a.phase == b.phase && a.step == b.step) {
      throw InputError(fmt::format("faults {} and {} hit the same step", format_kill_event(a),
                                   format_kill_event(b)));
    }
  }
}

std::string format_trace_line(const TraceEvent& e) {
  return fmt::format("{} {} {} {} {} {} {} {} {}", e.clock, to_string(e.kind), e.rank,
                     e.peer ? std::to_string(*e.peer) : std::string("-"),
                     e.panel < 0 ? std::string("-") : std::to_string(e.panel), to_string(e.phase),
                     e.step < 0 ? std::string("-") : std::to_string(e.step), e.bytes,
                     e.tag.empty() ? std::string("-") : e.tag);
}

void write_trace(std::ostream& os, const std::vector<TraceEvent>& trace) {
  for (const auto& e : trace) os << format_trace_line(e) << '\n';
}

FailedPeer::FailedPeer(Rank peer)
    : std::runtime_error(fmt::format("peer rank {} failed", peer)), peer_(peer) {}

DeadlockError::DeadlockError(std::string msg, std::vector<Rank> blocked)
    : std::runtime_error(std::move(msg)), blocked_(std::move(blocked)) {}

namespace {
// Thrown through a rank program when it is killed or the run shuts down.
// Deliberately not a std::exception so programs do not swallow it.
struct Killed {};
struct Shutdown {};
}  // namespace

class Fabric {
 public:
  Fabric(const Program& program, int ranks, FaultPlan plan, RunOptions options)
      : program_(program), plan_(std::move(plan)), fired_(plan_.events.size(), false),
        options_(std::move(options)) {
    for (int r = 0; r < ranks; ++r) {
      auto s = std::make_unique<Slot>();
      s->known.assign(ranks, 0);
      if (static_cast<std::size_t>(r) < options_.inputs.size()) s->input = options_.inputs[r];
      slots_.push_back(std::move(s));
    }
  }

  Outcome execute() {
    std::vector<std::thread> threads;
    threads.reserve(slots_.size());
    for (int r = 0; r < size(); ++r) threads.emplace_back([this, r] { thread_main(r); });
    for (auto& t : threads) t.join();
    if (error_) std::rethrow_exception(error_);
    return Outcome{std::move(trace_)};
  }

  int size() const { return static_cast<int>(slots_.size()); }

  // --- Comm entry points -------------------------------------------------

  int incarnation(Rank me) {
    std::lock_guard lk(mu_);
    return slot(me).incarnation;
  }

  std::optional<KillEvent> revived_from(Rank me) {
    std::lock_guard lk(mu_);
    return slot(me).revived_from;
  }

  void set_context(Rank me, int panel, Phase phase, int step) {
    std::lock_guard lk(mu_);
    auto& s = slot(me);
    s.panel = panel;
    s.phase = phase;
    s.step = step;
  }

  void send(Rank me, Rank dst, std::string_view tag, Packet payload) {
    std::unique_lock lk(mu_);
    enter_boundary(me);
    check_rank(dst);
    check_peer(me, dst);
    const std::size_t bytes = byte_size(payload);
    channels_[{me, dst, std::string(tag)}].push_back(std::move(payload));
    emit(me, EventKind::Send, dst, bytes, tag);
    yield(lk, me);
  }

  Packet recv(Rank me, Rank src, std::string_view tag) {
    std::unique_lock lk(mu_);
    enter_boundary(me);
    check_rank(src);
    const std::tuple<Rank, Rank, std::string> key{src, me, std::string(tag)};
    while (true) {
      auto it = channels_.find(key);
      if (it != channels_.end() && !it->second.empty()) {
        Packet p = std::move(it->second.front());
        it->second.pop_front();
        emit(me, EventKind::Recv, src, byte_size(p), tag);
        return p;
      }
      check_peer(me, src);
      block(lk, me, [this, me, src, &key] {
        auto c = channels_.find(key);
        return (c != channels_.end() && !c->second.empty()) || peer_failed(me, src) ||
               has_untried(me);
      });
    }
  }

  Packet sendrecv(Rank me, Rank peer, std::string_view tag, Packet payload) {
    std::unique_lock lk(mu_);
    enter_boundary(me);
    check_rank(peer);
    if (peer == me) throw ProtocolError("sendrecv with self");
    check_peer(me, peer);

    auto& mine = slot(me);
    auto& theirs = slot(peer);
    if (theirs.offer && theirs.offer->peer == me && theirs.offer->tag == tag &&
        theirs.offer->peer_incarnation == mine.incarnation) {
      Packet got = std::move(theirs.offer->payload);
      theirs.offer.reset();
      const std::size_t bytes = byte_size(got) + byte_size(payload);
      theirs.exchange_result = std::move(payload);
      emit(std::min(me, peer), EventKind::Exchange, std::max(me, peer), bytes, tag, me);
      yield(lk, me);
      return got;
    }

    mine.offer = Offer{peer, std::string(tag), std::move(payload), mine.known[peer]};
    while (true) {
      block(lk, me, [this, me, peer] {
        return slot(me).exchange_result.has_value() || peer_failed(me, peer) || has_untried(me);
      });
      if (mine.exchange_result) {
        Packet got = std::move(*mine.exchange_result);
        mine.exchange_result.reset();
        return got;
      }
      if (peer_failed(me, peer)) {
        mine.offer.reset();
        check_peer(me, peer);
      }
    }
  }

  void compute(Rank me, std::string_view tag) {
    std::lock_guard lk(mu_);
    emit(me, EventKind::Compute, std::nullopt, 0, tag);
  }

  void fault_point(Rank me, int panel, Phase phase, int step, Point point) {
    std::unique_lock lk(mu_);
    const KillEvent here{me, panel, phase, step, point};
    for (std::size_t i = 0; i < plan_.events.size(); ++i) {
      if (fired_[i] || !(plan_.events[i] == here)) continue;
      fired_[i] = true;
      auto& s = slot(me);
      s.panel = panel;
      s.phase = phase;
      s.step = step;
      emit(me, EventKind::Fail, std::nullopt, 0, to_string(point));
      kill(me, here);
      throw Killed{};
    }
  }

  void respawn(Rank me, Rank r) {
    std::lock_guard lk(mu_);
    check_rank(r);
    do_respawn(r);
    slot(me).known[r] = slot(r).incarnation;
  }

  Packet request_recovery(Rank me, Rank helper) {
    std::unique_lock lk(mu_);
    enter_boundary(me);
    check_rank(helper);
    if (helper == me) throw ProtocolError("recovery helper must be another rank");
    auto& s = slot(me);
    if (!s.revived_from) throw ProtocolError("recovery requested by an original process");
    check_peer(me, helper);
    slot(helper).requests.push_back(Request{me, *s.revived_from, false});
    while (true) {
      block(lk, me, [this, me, helper] {
        return slot(me).reply.has_value() || peer_failed(me, helper) || has_untried(me);
      });
      if (s.reply) {
        Packet p = std::move(*s.reply);
        s.reply.reset();
        return p;
      }
      if (peer_failed(me, helper)) check_peer(me, helper);
    }
  }

  void set_handler(Rank me, RecoveryHandler h) {
    std::lock_guard lk(mu_);
    slot(me).handler = std::move(h);
  }

  void serve_until_done(Rank me) {
    std::unique_lock lk(mu_);
    auto& s = slot(me);
    while (true) {
      enter_boundary(me);
      s.status = Status::Serving;
      if (quiescent()) {
        s.status = Status::Ready;
        return;
      }
      yield(lk, me);
      s.status = Status::Ready;
    }
  }

  const Matrix& input(Rank me) {
    std::lock_guard lk(mu_);
    return slot(me).input;
  }

  void commit(Rank me, int key, Matrix block) {
    std::lock_guard lk(mu_);
    slot(me).durable[key] = std::move(block);
  }

  Matrix load(Rank me, int key) {
    std::lock_guard lk(mu_);
    auto& d = slot(me).durable;
    auto it = d.find(key);
    if (it == d.end()) throw ProtocolError(fmt::format("rank {} has no durable slot {}", me, key));
    return it->second;
  }

 private:
  enum class Status { Ready, Blocked, Serving, Finished, Dead };

  struct Offer {
    Rank peer;
    std::string tag;
    Packet payload;
    int peer_incarnation;
  };

  struct Request {
    Rank requester;
    KillEvent event;
    bool tried;
  };

  struct Slot {
    Status status = Status::Ready;
    int incarnation = 0;
    std::vector<int> known;
    std::function<bool()> wait_pred;
    std::condition_variable cv;
    std::optional<Offer> offer;
    std::optional<Packet> exchange_result;
    std::deque<Request> requests;
    std::optional<Packet> reply;
    RecoveryHandler handler;
    std::optional<KillEvent> revived_from;
    std::optional<KillEvent> last_death;
    int panel = -1;
    Phase phase = Phase::None;
    int step = -1;
    Matrix input;
    std::map<int, Matrix> durable;
  };

  Slot& slot(Rank r) { return *slots_[static_cast<std::size_t>(r)]; }

  void check_rank(Rank r) const {
    if (r < 0 || r >= size()) throw ProtocolError(fmt::format("rank {} out of range", r));
  }

  bool peer_failed(Rank me, Rank p) {
    const auto& ps = slot(p);
    return ps.status == Status::Dead || ps.incarnation != slot(me).known[p];
  }

  void check_peer(Rank me, Rank p) {
    auto& ps = slot(p);
    if (ps.status == Status::Dead) throw FailedPeer(p);
    if (ps.incarnation != slot(me).known[p]) {
      slot(me).known[p] = ps.incarnation;
      throw FailedPeer(p);
    }
  }

  void emit(Rank me, EventKind kind, std::optional<Rank> peer, std::size_t bytes,
            std::string_view tag, std::optional<Rank> context_of = std::nullopt) {
    const auto& ctx = slot(context_of.value_or(me));
    trace_.push_back(TraceEvent{clock_++, kind, me, peer, ctx.panel, ctx.phase, ctx.step, bytes,
                                std::string(tag)});
  }

  bool has_untried(Rank me) {
    const auto& s = slot(me);
    return std::any_of(s.requests.begin(), s.requests.end(),
                       [](const Request& r) { return !r.tried; });
  }

  // Answer whatever recovery requests this rank can satisfy now.
  void service(Rank me) {
    auto& s = slot(me);
    for (auto it = s.requests.begin(); it != s.requests.end();) {
      if (it->tried || !s.handler) {
        it->tried = true;
        ++it;
        continue;
      }
      auto packet = s.handler(it->requester, it->event);
      if (!packet) {
        it->tried = true;
        ++it;
        continue;
      }
      auto& req = slot(it->requester);
      const std::size_t bytes = byte_size(*packet);
      req.reply = std::move(*packet);
      trace_.push_back(TraceEvent{clock_++, EventKind::Recover, it->requester, me,
                                  it->event.panel, it->event.phase, it->event.step, bytes,
                                  "recovery"});
      it = s.requests.erase(it);
    }
  }

  void enter_boundary(Rank me) {
    if (shutdown_) throw Shutdown{};
    for (auto& r : slot(me).requests) r.tried = false;
    service(me);
  }

  bool runnable(Rank r) {
    auto& s = slot(r);
    switch (s.status) {
      case Status::Ready: return true;
      case Status::Blocked: return s.wait_pred();
      case Status::Serving: return has_untried(r) || quiescent();
      case Status::Finished:
      case Status::Dead: return false;
    }
    return false;
  }

  bool quiescent() {
    for (const auto& s : slots_) {
      if (s->status != Status::Serving && s->status != Status::Finished &&
          s->status != Status::Dead) {
        return false;
      }
      if (!s->requests.empty()) return false;
    }
    return true;
  }

  std::optional<Rank> pick_next(Rank me) {
    for (int i = 1; i <= size(); ++i) {
      const Rank r = (me + i) % size();
      if (runnable(r)) return r;
    }
    return std::nullopt;
  }

  // Nobody can run: either everything finished or the program deadlocked.
  void stall() {
    bool all_done = true;
    std::vector<Rank> stuck;
    for (int r = 0; r < size(); ++r) {
      const auto st = slot(r).status;
      if (st != Status::Finished && st != Status::Dead) {
        all_done = false;
        stuck.push_back(r);
      }
    }
    if (!all_done && !error_) {
      std::string list;
      for (Rank r : stuck) list += (list.empty() ? "" : ",") + std::to_string(r);
      error_ = std::make_exception_ptr(
          DeadlockError(fmt::format("deadlock: ranks {} blocked", list), stuck));
    }
    shutdown();
  }

  void shutdown() {
    shutdown_ = true;
    for (auto& s : slots_) s->cv.notify_all();
  }

  // Hand control to the next runnable rank; returns once `me` runs again.
  void yield(std::unique_lock<std::mutex>& lk, Rank me) {
    auto next = pick_next(me);
    if (!next) {
      stall();
      throw Shutdown{};
    }
    if (*next == me) return;
    baton_ = *next;
    slot(*next).cv.notify_one();
    slot(me).cv.wait(lk, [&] { return baton_ == me || shutdown_; });
    if (shutdown_) throw Shutdown{};
  }

  template <typename Pred>
  void block(std::unique_lock<std::mutex>& lk, Rank me, Pred pred) {
    auto& s = slot(me);
    s.status = Status::Blocked;
    s.wait_pred = pred;
    yield(lk, me);
    s.status = Status::Ready;
    s.wait_pred = nullptr;
    service(me);
  }

  void kill(Rank me, const KillEvent& ev) {
    auto& s = slot(me);
    s.status = Status::Dead;
    s.offer.reset();
    s.exchange_result.reset();
    s.reply.reset();
    s.handler = nullptr;
    s.requests.clear();
    s.last_death = ev;
    for (auto it = channels_.begin(); it != channels_.end();) {
      it = std::get<1>(it->first) == me ? channels_.erase(it) : std::next(it);
    }
    for (auto& other : slots_) {
      auto& q = other->requests;
      q.erase(std::remove_if(q.begin(), q.end(), [me](const Request& r) { return r.requester == me; }),
              q.end());
    }
  }

  void do_respawn(Rank r) {
    auto& s = slot(r);
    if (s.status != Status::Dead) throw ProtocolError(fmt::format("rank {} is alive", r));
    s.incarnation += 1;
    s.status = Status::Ready;
    for (int p = 0; p < size(); ++p) s.known[p] = slot(p).incarnation;
    s.revived_from = s.last_death;
    s.panel = s.last_death->panel;
    s.phase = s.last_death->phase;
    s.step = s.last_death->step;
    emit(r, EventKind::Respawn, std::nullopt, 0, "rebuild");
  }

  void thread_main(Rank me) {
    std::unique_lock lk(mu_);
    slot(me).cv.wait(lk, [&] { return baton_ == me || shutdown_; });
    while (!shutdown_) {
      bool killed = false;
      Comm comm(this, me);
      lk.unlock();
      try {
        program_(comm);
        lk.lock();
      } catch (const Killed&) {
        lk.lock();
        killed = true;
      } catch (const Shutdown&) {
        lk.lock();
        break;
      } catch (...) {
        lk.lock();
        if (!error_) error_ = std::current_exception();
        shutdown();
        break;
      }
      if (!killed) {
        slot(me).status = Status::Finished;
        slot(me).handler = nullptr;
        break;
      }
      if (options_.auto_respawn) do_respawn(me);
      try {
        yield(lk, me);
      } catch (const Shutdown&) {
        break;
      }
    }
    if (!shutdown_) {
      auto next = pick_next(me);
      if (next) {
        baton_ = *next;
        slot(*next).cv.notify_one();
      } else {
        stall();
      }
    }
  }

  friend class Comm;

  const Program& program_;
  FaultPlan plan_;
  std::vector<bool> fired_;
  RunOptions options_;
  std::vector<std::unique_ptr<Slot>> slots_;
  std::map<std::tuple<Rank, Rank, std::string>, std::deque<Packet>> channels_;
  std::vector<TraceEvent> trace_;
  std::uint64_t clock_ = 0;
  std::mutex mu_;
  Rank baton_ = 0;
  bool shutdown_ = false;
  std::exception_ptr error_;
};

// --- Comm ------------------------------------------------------------------

int Comm::size() const noexcept { return fabric_->size(); }
int Comm::incarnation() const { return fabric_->incarnation(rank_); }
std::optional<KillEvent> Comm::revived_from() const { return fabric_->revived_from(rank_); }
void Comm::set_context(int panel, Phase phase, int step) {
  fabric_->set_context(rank_, panel, phase, step);
}
void Comm::send(Rank dst, std::string_view tag, Packet payload) {
  fabric_->send(rank_, dst, tag, std::move(payload));
}
Packet Comm::recv(Rank src, std::string_view tag) { return fabric_->recv(rank_, src, tag); }
Packet Comm::sendrecv(Rank peer, std::string_view tag, Packet payload) {
  return fabric_->sendrecv(rank_, peer, tag, std::move(payload));
}
void Comm::compute(std::string_view tag) { fabric_->compute(rank_, tag); }
void Comm::fault_point(int panel, Phase phase, int step, Point point) {
  fabric_->fault_point(rank_, panel, phase, step, point);
}
void Comm::respawn(Rank r) { fabric_->respawn(rank_, r); }
Packet Comm::request_recovery(Rank helper) { return fabric_->request_recovery(rank_, helper); }
void Comm::set_recovery_handler(RecoveryHandler handler) {
  fabric_->set_handler(rank_, std::move(handler));
}
void Comm::serve_until_done() { fabric_->serve_until_done(rank_); }
const Matrix& Comm::input() const { return fabric_->input(rank_); }
void Comm::commit(int slot, Matrix block) { fabric_->commit(rank_, slot, std::move(block)); }
Matrix Comm::load(int slot) const { return fabric_->load(rank_, slot); }

Outcome run(const Program& program, int ranks, const FaultPlan& plan, RunOptions options) {
  if (ranks < 1 || (ranks & (ranks - 1)) != 0) {
    throw InputError(fmt::format("rank count {} is not a power of two", ranks));
  }
  FaultPlan checked = plan;
  checked.validate(ranks);
  Fabric fabric(program, ranks, std::move(checked), std::move(options));
  return fabric.execute();
}

}  // namespace ftcaqr
