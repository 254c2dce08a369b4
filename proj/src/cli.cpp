#include "ftcaqr/cli.hpp"

#include <CLI11.hpp>
#include <cstring>
#include <fstream>
#include <iterator>
#include <ostream>

#include <fmt/format.h>

#include "ftcaqr/report.hpp"

namespace ftcaqr {

namespace {

constexpr int kOk = 0;
constexpr int kVerifyFailed = 1;
constexpr int kUsage = 2;
constexpr int kUnrecoverable = 3;

constexpr double kTolerance = 1e-12;

struct Options {
  std::size_t rows = 32;
  std::size_t cols = 16;
  std::size_t panel = 4;
  int ranks = 4;
  std::uint64_t seed = 0;
  std::string mode_name = "ft";
  std::string variant_name = "symmetric";
  Mode mode = Mode::FaultTolerant;
  Variant variant = Variant::Symmetric;
  std::vector<std::string> faults;
  std::string trace_path;
  std::string report_path;
  std::string input_path;
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

void add_common(CLI::App& cmd, Options& o) {
  cmd.add_option("--rows", o.rows, "global rows m")->capture_default_str();
  cmd.add_option("--cols", o.cols, "global columns n")->capture_default_str();
  cmd.add_option("--panel", o.panel, "panel width b")->capture_default_str();
  cmd.add_option("--ranks", o.ranks, "process count P (power of two)")->capture_default_str();
  cmd.add_option("--seed", o.seed, "matrix generator seed")->capture_default_str();
  cmd.add_option("--mode", o.mode_name, "baseline or ft")
      ->check(CLI::IsMember({"baseline", "ft"}))
      ->capture_default_str();
  cmd.add_option("--variant", o.variant_name, "literal or symmetric")
      ->check(CLI::IsMember({"literal", "symmetric"}))
      ->capture_default_str();
  cmd.add_option("--fault", o.faults, "RANK@PHASE:PANEL:STEP:POINT (repeatable)");
  cmd.add_option("--trace", o.trace_path, "trace output file");
  cmd.add_option("--report", o.report_path, "report output file");
  cmd.add_option("--input", o.input_path, "raw row-major float64 matrix");
}

Matrix load_matrix(const Options& o) {
  if (o.input_path.empty()) return random_matrix(o.rows, o.cols, o.seed);
  std::ifstream in(o.input_path, std::ios::binary);
  if (!in) throw UsageError(fmt::format("cannot read {}", o.input_path));
  const std::vector<char> bytes((std::istreambuf_iterator<char>(in)), {});
  const std::size_t want = o.rows * o.cols * sizeof(double);
  if (bytes.size() != want) {
    throw UsageError(fmt::format("{} holds {} bytes, {}x{} doubles need {}", o.input_path,
                                 bytes.size(), o.rows, o.cols, want));
  }
  std::vector<double> data(o.rows * o.cols);
  std::memcpy(data.data(), bytes.data(), want);
  return Matrix(o.rows, o.cols, std::move(data));
}

FaultPlan load_plan(const Options& o) {
  FaultPlan plan;
  for (const auto& f : o.faults) plan.events.push_back(parse_kill_event(f));
  return plan;
}

RunConfig config_of(const std::string& command, const Options& o, const FaultPlan& plan) {
  return {command, o.rows, o.cols, o.panel, o.ranks, o.seed, o.mode, o.variant, plan.events};
}

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw UsageError(fmt::format("cannot write {}", path));
  return f;
}

struct Run {
  FactorizationResult result;
  RunReport report;
};

Run run_once(const Matrix& a, const Distribution& dist, const Options& o, const FaultPlan& plan) {
  Run r{factor(a, dist, {o.mode, o.variant, plan}), {}};
  const Matrix q = reconstruct_q(r.result);
  Metrics m = metrics(a, q, r.result.R);
  m.max_diff = compare_runs(r.result.R, oracle_qr(a).R);
  r.report = summarize(r.result, m);
  return r;
}

void emit(const std::string& command, const Options& o, const FaultPlan& plan, const Run& run,
          std::ostream& out, bool print_report) {
  const RunConfig cfg = config_of(command, o, plan);
  if (print_report) write_report(out, cfg, run.report);
  if (!o.report_path.empty()) {
    auto f = open_out(o.report_path);
    write_report(f, cfg, run.report);
  }
  if (!o.trace_path.empty()) {
    auto f = open_out(o.trace_path);
    write_trace(f, run.result.trace);
  }
}

bool same_outcome(const FactorizationResult& x, const FactorizationResult& y) {
  if (!(x.R == y.R) || x.blocks != y.blocks) return false;
  for (std::size_t k = 0; k < x.panels.size(); ++k)
    for (std::size_t r = 0; r < x.panels[k].trailing.size(); ++r)
      if (!(x.panels[k].trailing[r].top_rows() == y.panels[k].trailing[r].top_rows())) return false;
  return true;
}

bool single_peer_recoveries(const FactorizationResult& res, std::size_t expected) {
  std::size_t n = 0;
  for (const auto& e : res.trace) {
    if (e.kind != EventKind::Recover) continue;
    if (!e.peer) return false;
    ++n;
  }
  return n == expected;
}

int cmd_inject(const Matrix& a, const Distribution& dist, const Options& o, const FaultPlan& plan,
               std::ostream& out) {
  const Run run = run_once(a, dist, o, plan);
  emit("inject", o, plan, run, out, true);
  const auto clean = factor(a, dist, {o.mode, o.variant, {}});
  const bool equal = same_outcome(run.result, clean);
  const bool peers = single_peer_recoveries(run.result, plan.events.size());
  out << fmt::format("bitwise_equal_to_fault_free {}\n", equal ? "yes" : "no");
  out << fmt::format("single_peer_recoveries {}\n", peers ? "yes" : "no");
  return equal && peers ? kOk : kVerifyFailed;
}

int cmd_sweep(const Matrix& a, const Distribution& dist, const Options& o, std::ostream& out) {
  if (o.mode != Mode::FaultTolerant) throw UsageError("sweep needs --mode ft");
  if (!o.faults.empty()) throw UsageError("sweep builds its own fault plans");
  if (dist.ranks < 2) throw UsageError("sweep needs at least two ranks");
  const Run clean = run_once(a, dist, o, {});
  const int steps = clean.result.panels[0].tree.steps();

  out << "panel phase step point";
  for (Rank r = 0; r < dist.ranks; ++r) out << fmt::format(" r{}", r);
  out << "\n";
  int runs = 0, failures = 0;
  for (int k = 0; k < dist.panels(); ++k) {
    for (Phase ph : {Phase::Tsqr, Phase::Trailing}) {
      if (ph == Phase::Trailing && dist.trailing_cols(k) == 0) continue;
      for (int s = 0; s < steps; ++s) {
        for (Point pt : {Point::BeforeExchange, Point::AfterExchange}) {
          out << fmt::format("{} {} {} {}", k, to_string(ph), s, to_string(pt));
          for (Rank r = 0; r < dist.ranks; ++r) {
            FaultPlan plan{{KillEvent{r, k, ph, s, pt}}};
            const auto res = factor(a, dist, {o.mode, o.variant, plan});
            const bool ok = same_outcome(res, clean.result) && single_peer_recoveries(res, 1);
            ++runs;
            failures += ok ? 0 : 1;
            out << (ok ? " PASS" : " FAIL");
          }
          out << "\n";
        }
      }
    }
  }
  out << fmt::format("sweep runs {} failures {}\n", runs, failures);
  emit("sweep", o, {}, clean, out, false);
  if (!o.report_path.empty()) {
    std::ofstream f(o.report_path, std::ios::binary | std::ios::app);
    f << fmt::format("sweep_runs {}\nsweep_failures {}\n", runs, failures);
  }
  return failures == 0 ? kOk : kVerifyFailed;
}

int cmd_verify(const Matrix& a, const Distribution& dist, const Options& o, const FaultPlan& plan,
               std::ostream& out) {
  const Run run = run_once(a, dist, o, plan);
  emit("verify", o, plan, run, out, true);
  const auto& m = run.report.metrics;
  const double r_scale = std::max(1.0, max_abs(oracle_qr(a).R));
  const struct {
    const char* name;
    bool ok;
  } checks[] = {
      {"backward_error", m.backward_error <= kTolerance},
      {"orthogonality", m.orthogonality <= kTolerance},
      {"triangularity", m.triangularity == 0.0},
      {"oracle_r", m.max_diff <= kTolerance * r_scale},
  };
  bool all = true;
  for (const auto& c : checks) {
    out << fmt::format("check {} {}\n", c.name, c.ok ? "PASS" : "FAIL");
    all = all && c.ok;
  }
  return all ? kOk : kVerifyFailed;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Fault-tolerant communication-avoiding QR on a simulated fabric", "ftcaqr"};
  app.require_subcommand(1);
  Options o;
  const char* names[][2] = {
      {"factor", "run a factorization and print its report"},
      {"inject", "run with a fault plan and check recovery"},
      {"sweep", "inject every single failure and compare with the fault-free run"},
      {"verify", "compare a distributed run against the sequential oracle"},
      {"trace", "write the event trace"},
  };
  for (const auto& [name, help] : names) add_common(*app.add_subcommand(name, help), o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e, out, err);
    return kOk;
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  o.mode = o.mode_name == "baseline" ? Mode::Baseline : Mode::FaultTolerant;
  o.variant = o.variant_name == "literal" ? Variant::Literal : Variant::Symmetric;

  try {
    const Matrix a = load_matrix(o);
    const auto dist = Distribution::make(o.rows, o.cols, o.panel, o.ranks);
    const FaultPlan plan = load_plan(o);
    if (command == "sweep") return cmd_sweep(a, dist, o, out);
    if (command == "inject") return cmd_inject(a, dist, o, plan, out);
    if (command == "verify") return cmd_verify(a, dist, o, plan, out);
    const Run run = run_once(a, dist, o, plan);
    if (command == "trace") {
      emit(command, o, plan, run, out, false);
      if (o.trace_path.empty()) write_trace(out, run.result.trace);
      return kOk;
    }
    emit(command, o, plan, run, out, true);
    return kOk;
  } catch (const UnrecoverableFailure& e) {
    err << "unrecoverable: " << e.what() << "\n";
    return kUnrecoverable;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kUsage;
  }
}

}  // namespace ftcaqr
