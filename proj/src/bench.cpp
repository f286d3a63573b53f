#include "tracehound/bench.hpp"

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <set>
#include <sstream>

#include <fcntl.h>
#include <sched.h>
#include <sys/resource.h>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"

namespace tracehound {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

constexpr int kRunAttempts = 3;

[[noreturn]] void plan_error(const std::string& field, const std::string& why) {
  throw InputError("bench plan: field '" + field + "': " + why);
}

std::uint64_t timeval_ns(const timeval& tv) {
  return static_cast<std::uint64_t>(tv.tv_sec) * 1'000'000'000ull +
         static_cast<std::uint64_t>(tv.tv_usec) * 1'000ull;
}

struct SpawnResult {
  std::uint64_t wall_ns = 0;
  std::uint64_t user_ns = 0;
  std::uint64_t sys_ns = 0;
  int exit_code = 0;     // >=0 normal exit, <0 killed by -exit_code
  int spawn_errno = 0;   // non-zero when exec failed
};

SpawnResult spawn_once(const BenchConfig& config, std::optional<std::uint32_t> pin_core) {
  // CLOEXEC pipe distinguishes exec failure from the command exiting 127.
  int err_pipe[2];
  if (pipe2(err_pipe, O_CLOEXEC) != 0) {
    throw BenchRunError(BenchRunError::Code::spawn_failure, config.name, 0, 0,
                        std::string("pipe2: ") + std::strerror(errno));
  }

  std::vector<std::string> argv_store = config.command;
  std::vector<char*> argv;
  argv.reserve(argv_store.size() + 1);
  for (std::string& arg : argv_store) argv.push_back(arg.data());
  argv.push_back(nullptr);

  const auto t0 = std::chrono::steady_clock::now();
  const pid_t pid = fork();
  if (pid < 0) {
    close(err_pipe[0]);
    close(err_pipe[1]);
    throw BenchRunError(BenchRunError::Code::spawn_failure, config.name, 0, 0,
                        std::string("fork: ") + std::strerror(errno));
  }
  if (pid == 0) {
    close(err_pipe[0]);
    if (pin_core) {
      cpu_set_t set;
      CPU_ZERO(&set);
      CPU_SET(static_cast<int>(*pin_core), &set);
      sched_setaffinity(0, sizeof(set), &set);
    }
    for (const auto& [key, value] : config.env) setenv(key.c_str(), value.c_str(), 1);
    execvp(argv[0], argv.data());
    const int saved = errno;
    ssize_t ignored = write(err_pipe[1], &saved, sizeof(saved));
    (void)ignored;
    _exit(127);
  }

  close(err_pipe[1]);
  int status = 0;
  rusage usage{};
  while (wait4(pid, &status, 0, &usage) < 0) {
    if (errno != EINTR) {
      close(err_pipe[0]);
      throw BenchRunError(BenchRunError::Code::spawn_failure, config.name, 0, 0,
                          std::string("wait4: ") + std::strerror(errno));
    }
  }
  const auto t1 = std::chrono::steady_clock::now();

  SpawnResult result;
  int exec_errno = 0;
  if (read(err_pipe[0], &exec_errno, sizeof(exec_errno)) == sizeof(exec_errno)) {
    result.spawn_errno = exec_errno;
  }
  close(err_pipe[0]);

  const auto wall = std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count();
  result.wall_ns = wall > 0 ? static_cast<std::uint64_t>(wall) : 1;
  result.user_ns = timeval_ns(usage.ru_utime);
  result.sys_ns = timeval_ns(usage.ru_stime);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status)
                                       : (WIFSIGNALED(status) ? -WTERMSIG(status) : -1);
  return result;
}

RunRecord execute_run(const BenchConfig& config, std::uint32_t run_index,
                      std::optional<std::uint32_t> pin_core) {
  for (int attempt = 1; attempt <= kRunAttempts; ++attempt) {
    SpawnResult r = spawn_once(config, pin_core);
    if (r.spawn_errno != 0) {
      throw BenchRunError(BenchRunError::Code::spawn_failure, config.name, run_index, 0,
                          "config '" + config.name + "' run " + std::to_string(run_index) +
                              ": exec failed: " + std::strerror(r.spawn_errno));
    }
    if (r.exit_code == 0) {
      return {config.name, run_index, r.wall_ns, r.user_ns, r.sys_ns, 0};
    }
    if (attempt == kRunAttempts) {
      throw BenchRunError(BenchRunError::Code::non_zero_exit, config.name, run_index, r.exit_code,
                          "config '" + config.name + "' run " + std::to_string(run_index) +
                              ": exit code " + std::to_string(r.exit_code) + " after " +
                              std::to_string(kRunAttempts) + " attempts");
    }
  }
  // unreachable
  throw BenchRunError(BenchRunError::Code::non_zero_exit, config.name, run_index, -1, "retry");
}

double round3(double v) { return std::round(v * 1000.0) / 1000.0; }

}  // namespace

BenchPlan BenchPlan::parse(std::istream& in) {
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(std::string("bench plan: invalid JSON: ") + e.what());
  }
  if (!doc.is_object()) plan_error("<root>", "expected a JSON object");

  const std::set<std::string> top_allowed = {"configurations", "warmup_runs", "measured_runs",
                                             "pin_core", "baseline"};
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (!top_allowed.count(it.key())) plan_error(it.key(), "unknown field");
  }

  BenchPlan plan;
  if (!doc.contains("configurations") || !doc["configurations"].is_array()) {
    plan_error("configurations", "missing or not an array");
  }
  for (const json& c : doc["configurations"]) {
    if (!c.is_object()) plan_error("configurations", "entries must be objects");
    const std::set<std::string> allowed = {"name", "command", "env", "instrumentation"};
    for (auto it = c.begin(); it != c.end(); ++it) {
      if (!allowed.count(it.key())) plan_error("configurations." + it.key(), "unknown field");
    }
    BenchConfig config;
    if (!c.contains("name") || !c["name"].is_string() || c["name"].get<std::string>().empty()) {
      plan_error("configurations.name", "missing or empty");
    }
    config.name = c["name"].get<std::string>();
    if (!c.contains("command") || !c["command"].is_array() || c["command"].empty()) {
      plan_error("configurations.command", "missing or empty argv array");
    }
    for (const json& arg : c["command"]) {
      if (!arg.is_string()) plan_error("configurations.command", "argv entries must be strings");
      config.command.push_back(arg.get<std::string>());
    }
    if (c.contains("env")) {
      if (!c["env"].is_object()) plan_error("configurations.env", "expected object");
      for (auto it = c["env"].begin(); it != c["env"].end(); ++it) {
        if (!it.value().is_string()) plan_error("configurations.env", "values must be strings");
        config.env[it.key()] = it.value().get<std::string>();
      }
    }
    if (c.contains("instrumentation")) {
      if (!c["instrumentation"].is_string()) plan_error("configurations.instrumentation", "expected string");
      const std::string mode = c["instrumentation"].get<std::string>();
      if (mode == "none") {
        config.instrumentation = Instrumentation::none;
      } else if (mode == "usdt") {
        config.instrumentation = Instrumentation::usdt;
      } else if (mode == "uprobes") {
        config.instrumentation = Instrumentation::uprobes;
      } else if (mode == "custom") {
        config.instrumentation = Instrumentation::custom;
      } else {
        plan_error("configurations.instrumentation",
                   "expected none|usdt|uprobes|custom, got '" + mode + "'");
      }
    }
    plan.configurations.push_back(std::move(config));
  }

  auto require_u32 = [&](const char* field) {
    if (!doc.contains(field) || !doc[field].is_number_unsigned()) {
      plan_error(field, "missing or not an unsigned integer");
    }
    const std::uint64_t v = doc[field].get<std::uint64_t>();
    if (v > UINT32_MAX) plan_error(field, "out of range");
    return static_cast<std::uint32_t>(v);
  };
  plan.warmup_runs = require_u32("warmup_runs");
  plan.measured_runs = require_u32("measured_runs");
  if (doc.contains("pin_core")) {
    if (!doc["pin_core"].is_number_unsigned()) plan_error("pin_core", "expected unsigned integer");
    plan.pin_core = doc["pin_core"].get<std::uint32_t>();
  }
  if (!doc.contains("baseline") || !doc["baseline"].is_string()) {
    plan_error("baseline", "missing baseline configuration name");
  }
  plan.baseline = doc["baseline"].get<std::string>();
  plan.validate();
  return plan;
}

BenchPlan BenchPlan::parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

void BenchPlan::validate() const {
  if (configurations.empty()) plan_error("configurations", "at least one configuration required");
  if (measured_runs < 2) plan_error("measured_runs", "must be >= 2");
  std::set<std::string> names;
  for (const BenchConfig& c : configurations) {
    if (!names.insert(c.name).second) plan_error("configurations.name", "duplicate '" + c.name + "'");
  }
  if (!names.count(baseline)) {
    plan_error("baseline", "'" + baseline + "' does not name a configuration");
  }
}

BenchOutcome run_benchmark(const BenchPlan& plan, const PinPolicy& policy) {
  plan.validate();
  BenchOutcome outcome;

  std::optional<std::uint32_t> pin = plan.pin_core;
  if (pin) {
    const bool usable = affinity_supported() && *pin < static_cast<std::uint32_t>(host_cpu_count());
    if (!usable) {
      const std::string why = "core " + std::to_string(*pin) + " not available (host has " +
                              std::to_string(host_cpu_count()) + " cores)";
      if (!policy.allow_unpinned) {
        throw BenchRunError(BenchRunError::Code::pin_unsupported, "", 0, 0,
                            "cannot pin: " + why + "; pass --allow-unpinned to proceed");
      }
      outcome.warnings.push_back("WARNING: running un-pinned: " + why);
      pin.reset();
    }
  } else {
    if (!policy.allow_unpinned) {
      throw BenchRunError(BenchRunError::Code::pin_unsupported, "", 0, 0,
                          "plan does not set pin_core; pass --allow-unpinned to run un-pinned");
    }
    outcome.warnings.push_back(
        "WARNING: running un-pinned (no pin_core in plan); results may be noisy");
  }
  outcome.pinned = pin.has_value();

  // Serial, config-major: all of config A, then all of config B.
  for (const BenchConfig& config : plan.configurations) {
    for (std::uint32_t i = 0; i < plan.warmup_runs; ++i) {
      (void)execute_run(config, i, pin);
    }
    for (std::uint32_t i = 0; i < plan.measured_runs; ++i) {
      outcome.records.push_back(execute_run(config, i, pin));
    }
  }
  return outcome;
}

BenchStats summarize(std::span<const RunRecord> records) {
  if (records.size() < 2) {
    throw StatsError(StatsError::Code::insufficient_runs,
                     "need at least 2 measured runs, got " + std::to_string(records.size()));
  }
  std::vector<double> wall_ms;
  wall_ms.reserve(records.size());
  double user_total = 0;
  double sys_total = 0;
  for (const RunRecord& r : records) {
    wall_ms.push_back(static_cast<double>(r.wall_ns) / 1e6);
    user_total += static_cast<double>(r.user_ns) / 1e6;
    sys_total += static_cast<double>(r.sys_ns) / 1e6;
  }
  std::sort(wall_ms.begin(), wall_ms.end());
  const std::size_t n = wall_ms.size();

  double sum = 0;
  for (double v : wall_ms) sum += v;
  const double mean = sum / static_cast<double>(n);

  double sq = 0;
  for (double v : wall_ms) sq += (v - mean) * (v - mean);
  const double stddev = std::sqrt(sq / static_cast<double>(n - 1));

  const double median =
      n % 2 == 1 ? wall_ms[n / 2] : (wall_ms[n / 2 - 1] + wall_ms[n / 2]) / 2.0;

  BenchStats stats;
  stats.config_name = records.front().config_name;
  stats.mean_ms = mean;
  stats.stddev_ms = stddev;
  stats.median_ms = median;
  stats.min_ms = wall_ms.front();
  stats.max_ms = wall_ms.back();
  stats.user_ms_total = user_total;
  stats.sys_ms_total = sys_total;
  stats.n = n;
  return stats;
}

double relative_overhead(const BenchStats& candidate, const BenchStats& baseline) {
  if (!(baseline.mean_ms > 0)) {
    throw StatsError(StatsError::Code::zero_baseline,
                     "baseline mean must be > 0, got " + std::to_string(baseline.mean_ms));
  }
  return 100.0 * (candidate.mean_ms - baseline.mean_ms) / baseline.mean_ms;
}

Breakdown sys_user_breakdown(std::span<const RunRecord> records) {
  Breakdown b;
  if (records.empty()) return b;
  b.config_name = records.front().config_name;
  b.n = records.size();
  for (const RunRecord& r : records) {
    b.user_ms_total += static_cast<double>(r.user_ns) / 1e6;
    b.sys_ms_total += static_cast<double>(r.sys_ns) / 1e6;
  }
  b.user_ms_mean = b.user_ms_total / static_cast<double>(b.n);
  b.sys_ms_mean = b.sys_ms_total / static_cast<double>(b.n);
  return b;
}

std::vector<RunRecord> trim_records(std::span<const RunRecord> records, double trim) {
  if (trim < 0 || trim >= 0.5) {
    throw InputError("--trim must be in [0, 0.5)");
  }
  std::vector<RunRecord> sorted(records.begin(), records.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const RunRecord& a, const RunRecord& b) { return a.wall_ns < b.wall_ns; });
  const std::size_t drop = static_cast<std::size_t>(std::floor(sorted.size() * trim));
  return {sorted.begin() + drop, sorted.end() - drop};
}

double self_workload(std::uint64_t lo, std::uint64_t hi, std::uint32_t iters) {
  if (lo < 1 || lo > hi || iters < 1) {
    throw StatsError(StatsError::Code::invalid_range,
                     "workload range requires 1 <= lo <= hi and iters >= 1");
  }
  double checksum = 0;
  for (std::uint64_t n = lo; n <= hi; ++n) {
    const double target = static_cast<double>(n);
    double x = target;
    for (std::uint32_t i = 0; i < iters; ++i) {
      x = (x + target / x) * 0.5;
    }
    checksum += x;
  }
  return checksum;
}

int host_cpu_count() {
  const long n = sysconf(_SC_NPROCESSORS_ONLN);
  return n > 0 ? static_cast<int>(n) : 1;
}

bool affinity_supported() {
  cpu_set_t set;
  CPU_ZERO(&set);
  return sched_getaffinity(0, sizeof(set), &set) == 0;
}

std::string render_table(std::span<const BenchStats> stats, const std::string& baseline_name) {
  std::string out = "Type | Mean (ms) | Stddev (ms) | Median (ms) | Min (ms) | Max (ms)\n";
  char row[256];
  for (const BenchStats& s : stats) {
    std::snprintf(row, sizeof(row), "%s | %.3f | %.3f | %.3f | %.3f | %.3f\n",
                  s.config_name.c_str(), round3(s.mean_ms), round3(s.stddev_ms),
                  round3(s.median_ms), round3(s.min_ms), round3(s.max_ms));
    out += row;
  }
  const BenchStats* baseline = nullptr;
  for (const BenchStats& s : stats) {
    if (s.config_name == baseline_name) baseline = &s;
  }
  if (baseline) {
    for (const BenchStats& s : stats) {
      if (s.config_name == baseline_name) continue;
      std::snprintf(row, sizeof(row), "Relative overhead (%s vs %s): %+.2f%%\n",
                    s.config_name.c_str(), baseline_name.c_str(),
                    relative_overhead(s, *baseline));
      out += row;
    }
  }
  return out;
}

std::string results_to_json(const BenchPlan& plan, const BenchOutcome& outcome,
                            std::span<const BenchStats> stats, int indent) {
  ordered_json doc;
  doc["baseline"] = plan.baseline;
  doc["warmup_runs"] = plan.warmup_runs;
  doc["measured_runs"] = plan.measured_runs;
  doc["pinned"] = outcome.pinned;
  if (plan.pin_core) doc["pin_core"] = *plan.pin_core;

  auto records = ordered_json::array();
  for (const RunRecord& r : outcome.records) {
    ordered_json rec;
    rec["config"] = r.config_name;
    rec["run_index"] = r.run_index;
    rec["wall_ns"] = r.wall_ns;
    rec["user_ns"] = r.user_ns;
    rec["sys_ns"] = r.sys_ns;
    rec["exit_code"] = r.exit_code;
    records.push_back(std::move(rec));
  }
  doc["records"] = std::move(records);

  auto stat_rows = ordered_json::array();
  const BenchStats* baseline = nullptr;
  for (const BenchStats& s : stats) {
    if (s.config_name == plan.baseline) baseline = &s;
  }
  for (const BenchStats& s : stats) {
    ordered_json row;
    row["config"] = s.config_name;
    row["n"] = s.n;
    row["mean_ms"] = s.mean_ms;
    row["stddev_ms"] = s.stddev_ms;
    row["median_ms"] = s.median_ms;
    row["min_ms"] = s.min_ms;
    row["max_ms"] = s.max_ms;
    row["user_ms_total"] = s.user_ms_total;
    row["sys_ms_total"] = s.sys_ms_total;
    if (baseline && s.config_name != plan.baseline) {
      row["overhead_pct"] = relative_overhead(s, *baseline);
    }
    stat_rows.push_back(std::move(row));
  }
  doc["stats"] = std::move(stat_rows);

  auto warns = ordered_json::array();
  for (const std::string& w : outcome.warnings) warns.push_back(w);
  doc["warnings"] = std::move(warns);
  return doc.dump(indent) + "\n";
}

std::string breakdown_to_json(std::span<const Breakdown> rows, int indent) {
  ordered_json doc = ordered_json::array();
  for (const Breakdown& b : rows) {
    ordered_json row;
    row["config"] = b.config_name;
    row["n"] = b.n;
    row["user_ms_total"] = b.user_ms_total;
    row["sys_ms_total"] = b.sys_ms_total;
    row["user_ms_mean"] = b.user_ms_mean;
    row["sys_ms_mean"] = b.sys_ms_mean;
    doc.push_back(std::move(row));
  }
  return doc.dump(indent) + "\n";
}

std::string breakdown_to_csv(std::span<const Breakdown> rows) {
  std::string out = "config,n,user_ms_total,sys_ms_total,user_ms_mean,sys_ms_mean\n";
  char row[256];
  for (const Breakdown& b : rows) {
    std::snprintf(row, sizeof(row), "%s,%zu,%.6f,%.6f,%.6f,%.6f\n", b.config_name.c_str(), b.n,
                  b.user_ms_total, b.sys_ms_total, b.user_ms_mean, b.sys_ms_mean);
    out += row;
  }
  return out;
}

std::string to_string(Instrumentation instr) {
  switch (instr) {
    case Instrumentation::none: return "none";
    case Instrumentation::usdt: return "usdt";
    case Instrumentation::uprobes: return "uprobes";
    case Instrumentation::custom: return "custom";
  }
  return "?";
}

}  // namespace tracehound
