#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracehound/errors.hpp"

namespace tracehound {

enum class Instrumentation {
  none,
  usdt,
  uprobes,
  custom,
};

struct BenchConfig {
  std::string name;
  std::vector<std::string> command;
  std::map<std::string, std::string> env;
  // Label only: instrumented modes are realized as command wrappers, so the
  // harness itself stays instrumentation-agnostic.
  Instrumentation instrumentation = Instrumentation::none;
};

struct BenchPlan {
  std::vector<BenchConfig> configurations;
  std::uint32_t warmup_runs = 0;
  std::uint32_t measured_runs = 0;
  std::optional<std::uint32_t> pin_core;
  std::string baseline;

  // JSON: {configurations:[{name, command:[argv...], env:{}, instrumentation?}],
  //        warmup_runs, measured_runs, pin_core?, baseline}. Unknown fields
  // are rejected. Throws InputError naming the offending field.
  static BenchPlan parse(std::istream& in);
  static BenchPlan parse(const std::string& text);

  // measured_runs >= 2, unique names, baseline names exactly one config,
  // commands non-empty. Throws InputError.
  void validate() const;
};

struct RunRecord {
  std::string config_name;
  std::uint32_t run_index = 0;
  std::uint64_t wall_ns = 0;
  std::uint64_t user_ns = 0;
  std::uint64_t sys_ns = 0;
  int exit_code = 0;
};

struct BenchStats {
  std::string config_name;
  double mean_ms = 0;
  double stddev_ms = 0;
  double median_ms = 0;
  double min_ms = 0;
  double max_ms = 0;
  double user_ms_total = 0;
  double sys_ms_total = 0;
  std::size_t n = 0;
};

struct Breakdown {
  std::string config_name;
  double user_ms_total = 0;
  double sys_ms_total = 0;
  double user_ms_mean = 0;
  double sys_ms_mean = 0;
  std::size_t n = 0;
};

struct PinPolicy {
  // When pinning is requested but unavailable (or the plan does not pin at
  // all), proceed un-pinned with a warning instead of failing.
  bool allow_unpinned = false;
};

struct BenchOutcome {
  std::vector<RunRecord> records;
  std::vector<std::string> warnings;
  bool pinned = false;
};

// Executes the plan serially, config-major: per configuration all warm-up
// runs (discarded), then all measured runs. Wall time is a monotonic clock
// around the child lifetime; user/sys come from per-child rusage. A non-zero
// exit is retried up to 3 attempts, then fatal. Throws BenchRunError.
BenchOutcome run_benchmark(const BenchPlan& plan, const PinPolicy& policy);

// Table-1 style statistics over one configuration's records. Sample (n-1)
// stddev; even-n median is the mean of the two central values. Full double
// precision; rounding happens only at rendering. Throws insufficient_runs.
BenchStats summarize(std::span<const RunRecord> records);

// 100 * (candidate.mean - baseline.mean) / baseline.mean. Throws zero_baseline.
double relative_overhead(const BenchStats& candidate, const BenchStats& baseline);

Breakdown sys_user_breakdown(std::span<const RunRecord> records);

// Drops floor(n*trim) records from each tail of the sorted wall times.
// trim in [0, 0.5).
std::vector<RunRecord> trim_records(std::span<const RunRecord> records, double trim);

// Newton-Raphson square-root workload: for each n in [lo, hi] iterate
// x <- (x + n/x)/2 from x0 = n, `iters` times, and return the sum of the
// final approximations. Deterministic. Throws invalid_range unless
// 1 <= lo <= hi and iters >= 1.
double self_workload(std::uint64_t lo, std::uint64_t hi, std::uint32_t iters);

int host_cpu_count();
bool affinity_supported();

// Rendered text table, exact column layout:
// Type | Mean (ms) | Stddev (ms) | Median (ms) | Min (ms) | Max (ms)
// followed by one relative-overhead line per non-baseline configuration.
// 3-decimal cells, 2-decimal percentages.
std::string render_table(std::span<const BenchStats> stats, const std::string& baseline_name);

std::string results_to_json(const BenchPlan& plan, const BenchOutcome& outcome,
                            std::span<const BenchStats> stats, int indent = 2);
std::string breakdown_to_json(std::span<const Breakdown> rows, int indent = 2);
std::string breakdown_to_csv(std::span<const Breakdown> rows);

std::string to_string(Instrumentation instr);

}  // namespace tracehound
