#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "tracehound/bench.hpp"
#include "tracehound/live_collector.hpp"
#include "tracehound/pipeline.hpp"
#include "tracehound/proctree.hpp"
#include "tracehound/profiles.hpp"
#include "tracehound/trace_model.hpp"

namespace {

using namespace tracehound;

void write_file_or_throw(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write '" + path.string() + "'");
  out << bytes;
}

void print_warnings(const std::vector<TraceWarning>& warnings) {
  for (const TraceWarning& w : warnings) {
    std::cerr << "warning: ts=" << w.ts << ": " << w.message << "\n";
  }
}

int cmd_probe() {
  const CapabilityReport report = capability_probe();
  std::cout << "tracing available: " << (report.tracing_available ? "yes" : "no") << "\n";
  std::cout << "  lifecycle: " << (report.lifecycle_ok ? "ok" : "unavailable") << "\n";
  std::cout << "  sampling:  " << (report.sampling_ok ? "ok" : "unavailable") << "\n";
  std::cout << "  sched:     " << (report.sched_ok ? "ok" : "unavailable") << "\n";
  for (const std::string& reason : report.reasons) {
    std::cout << "  reason: " << reason << "\n";
  }
  return 0;
}

int cmd_workload(std::uint64_t lo, std::uint64_t hi, std::uint32_t iters, std::uint32_t repeat) {
  if (repeat < 1) throw InputError("--repeat must be >= 1");
  double checksum = 0;
  for (std::uint32_t i = 0; i < repeat; ++i) {
    checksum = self_workload(lo, hi, iters);
  }
  std::printf("%.9f\n", checksum);
  return 0;
}

int cmd_replay(const ReplayOptions& options) {
  const ReplaySummary summary = run_replay(options);
  print_warnings(summary.warnings);
  std::cout << "events: " << summary.event_count << "\n";
  std::cout << "warnings: " << summary.warnings.size() << "\n";
  for (const std::string& path : summary.artifacts) {
    std::cout << "wrote " << path << "\n";
  }
  return 0;
}

int cmd_report(const std::string& events_path, const std::optional<std::string>& symbols_path,
               const std::optional<TaskKey>& scope, bool tree_out, bool validate_out,
               const std::string& profile_kind, const std::optional<std::string>& out_path) {
  std::ifstream in(events_path, std::ios::binary);
  if (!in) throw InputError("cannot open events file '" + events_path + "'");
  const std::vector<TraceEvent> merged = merge_streams(split_by_cpu(parse_event_stream(in)));

  std::string output;
  if (tree_out) {
    output = build_process_tree(merged).to_json();
  } else if (validate_out) {
    for (const TraceWarning& w : validate_trace(merged)) {
      output += "ts=" + std::to_string(w.ts) + " tid=" + std::to_string(w.tid) + " " + w.message +
                "\n";
    }
  } else {
    SymbolMap map;
    if (symbols_path) {
      std::ifstream sym(*symbols_path, std::ios::binary);
      if (!sym) throw InputError("cannot open symbol map '" + *symbols_path + "'");
      map = SymbolMap::parse(sym);
    }
    const ProcessTree tree = build_process_tree(merged);
    const ProcessTree* tree_ptr = scope ? &tree : nullptr;
    if (scope && !tree.find(*scope)) {
      throw TreeError(TreeError::Code::unknown_node, scope->tid,
                      "scope " + scope->str() + " not present in trace");
    }
    if (profile_kind == "on_cpu") {
      output = profile_to_json(aggregate_samples(merged, map, tree_ptr, scope));
    } else {
      const PairingResult pairing = pair_context_switches(merged);
      output = profile_to_json(build_offcpu_profile(pairing, map, tree_ptr, scope));
    }
  }

  if (out_path) {
    write_file_or_throw(*out_path, output);
  } else {
    std::cout << output;
  }
  return 0;
}

int cmd_bench(const std::string& plan_path, const std::string& out_dir, bool json_only,
              bool allow_unpinned, double trim) {
  std::ifstream in(plan_path, std::ios::binary);
  if (!in) throw InputError("cannot open plan file '" + plan_path + "'");
  const BenchPlan plan = BenchPlan::parse(in);

  const BenchOutcome outcome = run_benchmark(plan, PinPolicy{allow_unpinned});
  for (const std::string& w : outcome.warnings) std::cerr << w << "\n";

  std::vector<BenchStats> stats;
  std::vector<Breakdown> breakdown;
  for (const BenchConfig& config : plan.configurations) {
    std::vector<RunRecord> records;
    for (const RunRecord& r : outcome.records) {
      if (r.config_name == config.name) records.push_back(r);
    }
    const std::vector<RunRecord> kept = trim > 0 ? trim_records(records, trim) : records;
    stats.push_back(summarize(kept));
    breakdown.push_back(sys_user_breakdown(kept));
  }

  const std::string table = render_table(stats, plan.baseline);
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path out(out_dir);
  write_file_or_throw(out / "results.json", results_to_json(plan, outcome, stats));
  write_file_or_throw(out / "table.txt", table);
  write_file_or_throw(out / "breakdown.json", breakdown_to_json(breakdown));
  write_file_or_throw(out / "breakdown.csv", breakdown_to_csv(breakdown));

  if (!json_only) std::cout << table;
  return 0;
}

int cmd_profile(const LiveSessionConfig& config, const std::string& out_dir, bool count_mode) {
  std::filesystem::create_directories(out_dir);
  LiveSessionConfig session = config;
  session.output_path = (std::filesystem::path(out_dir) / "trace.jsonl").string();
  const SessionResult result = record(session);
  std::cout << "trace: " << result.output_path << " (" << result.events_written << " events)\n";

  ReplayOptions replay;
  replay.events_path = result.output_path;
  replay.out_dir = out_dir;
  replay.count_mode = count_mode;
  const ReplaySummary summary = run_replay(replay);
  print_warnings(summary.warnings);
  for (const std::string& path : summary.artifacts) {
    std::cout << "wrote " << path << "\n";
  }
  std::cout << "child exit code: " << result.child_exit_code << "\n";
  if (result.child_exit_code != 0) {
    throw RunError("profiled command exited with code " +
                   std::to_string(result.child_exit_code));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tracehound: on/off-CPU profiling over a replayable event stream, plus an "
               "instrumentation-overhead benchmark harness"};
  app.require_subcommand(1);

  // --- replay ---
  auto* replay = app.add_subcommand("replay", "analyze a replay event file");
  std::string replay_events;
  std::optional<std::string> replay_symbols;
  std::optional<std::string> replay_scope;
  std::string replay_out;
  bool replay_counts = false;
  replay->add_option("--events", replay_events, "replay JSONL event file")->required();
  replay->add_option("--symbols", replay_symbols, "symbol map file");
  replay->add_option("--scope", replay_scope, "restrict profiles to PID:TID[:GEN] subtree");
  replay->add_option("--out", replay_out, "output directory")->required();
  replay->add_flag("--counts", replay_counts, "weigh on-CPU stacks by sample count, not period");

  // --- report ---
  auto* report = app.add_subcommand("report", "print a single report from a replay file");
  std::string report_events;
  std::optional<std::string> report_symbols;
  std::optional<std::string> report_scope;
  std::optional<std::string> report_out;
  bool report_tree = false;
  bool report_validate = false;
  std::string report_profile;
  report->add_option("--events", report_events, "replay JSONL event file")->required();
  report->add_option("--symbols", report_symbols, "symbol map file");
  report->add_option("--scope", report_scope, "restrict to PID:TID[:GEN] subtree");
  report->add_option("--out", report_out, "output file (default stdout)");
  report->add_flag("--tree", report_tree, "emit the process tree as JSON");
  report->add_flag("--validate", report_validate, "list trace warnings");
  report->add_option("--profile", report_profile, "emit a profile as JSON")
      ->check(CLI::IsMember({"on_cpu", "off_cpu"}));

  // --- bench ---
  auto* bench = app.add_subcommand("bench", "run an overhead benchmark plan");
  std::string bench_plan;
  std::string bench_out;
  bool bench_json = false;
  bool bench_allow_unpinned = false;
  double bench_trim = 0;
  bench->add_option("--plan", bench_plan, "benchmark plan JSON")->required();
  bench->add_option("--out", bench_out, "output directory")->required();
  bench->add_flag("--json", bench_json, "suppress the stdout table; files only");
  bench->add_flag("--allow-unpinned", bench_allow_unpinned,
                  "proceed with a warning when CPU pinning is unavailable");
  bench->add_option("--trim", bench_trim, "trim this fraction from each tail of wall times")
      ->check(CLI::Range(0.0, 0.499));

  // --- workload ---
  auto* workload = app.add_subcommand("workload", "bundled Newton-Raphson sqrt benchmark target");
  std::uint64_t wl_lo = 1;
  std::uint64_t wl_hi = 100;
  std::uint32_t wl_iters = 20;
  std::uint32_t wl_repeat = 1;
  workload->add_option("--lo", wl_lo, "first integer");
  workload->add_option("--hi", wl_hi, "last integer");
  workload->add_option("--iters", wl_iters, "Newton-Raphson iterations per integer");
  workload->add_option("--repeat", wl_repeat, "repeat the whole workload N times");

  // --- probe ---
  app.add_subcommand("probe", "report live-tracing capabilities of this host");

  // --- profile ---
  auto* profile = app.add_subcommand("profile", "trace a command live, then analyze");
  std::optional<std::uint64_t> prof_period;
  bool prof_sched = false;
  bool prof_lifecycle = false;
  std::string prof_attach = "tracepoints";
  std::string prof_out;
  bool prof_counts = false;
  std::vector<std::string> prof_command;
  profile->add_option("--sample-period", prof_period, "on-CPU sampling period in ns");
  profile->add_flag("--sched", prof_sched, "trace context switches (off-CPU)");
  profile->add_flag("--lifecycle", prof_lifecycle, "trace fork/exec/exit of the task tree");
  profile->add_option("--attach", prof_attach, "lifecycle hook mechanism")
      ->check(CLI::IsMember({"uprobes", "usdt", "tracepoints"}));
  profile->add_option("--out", prof_out, "output directory")->required();
  profile->add_flag("--counts", prof_counts, "weigh on-CPU stacks by sample count, not period");
  profile->add_option("command", prof_command, "command to trace (after --)")->expected(-1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (app.got_subcommand("probe")) return cmd_probe();
    if (app.got_subcommand("workload")) return cmd_workload(wl_lo, wl_hi, wl_iters, wl_repeat);
    if (app.got_subcommand("replay")) {
      ReplayOptions options;
      options.events_path = replay_events;
      options.symbols_path = replay_symbols;
      if (replay_scope) options.scope = parse_task_key(*replay_scope);
      options.out_dir = replay_out;
      options.count_mode = replay_counts;
      return cmd_replay(options);
    }
    if (app.got_subcommand("report")) {
      const int selected = int(report_tree) + int(report_validate) + int(!report_profile.empty());
      if (selected != 1) {
        throw InputError("report: pick exactly one of --tree, --validate, --profile");
      }
      std::optional<TaskKey> scope;
      if (report_scope) scope = parse_task_key(*report_scope);
      return cmd_report(report_events, report_symbols, scope, report_tree, report_validate,
                        report_profile, report_out);
    }
    if (app.got_subcommand("bench")) {
      return cmd_bench(bench_plan, bench_out, bench_json, bench_allow_unpinned, bench_trim);
    }
    if (app.got_subcommand("profile")) {
      if (prof_command.empty()) throw InputError("profile: missing command (after --)");
      LiveSessionConfig config;
      config.command = prof_command;
      config.sample_period_ns = prof_period;
      config.enable_sampling = prof_period.has_value();
      config.enable_sched = prof_sched;
      config.enable_lifecycle = prof_lifecycle;
      config.attach_mode = *attach_mode_from_string(prof_attach);
      config.validate();
      return cmd_profile(config, prof_out, prof_counts);
    }
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const RunError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
