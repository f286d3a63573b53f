// Acceptance suite. Runs every gate and prints one [PASS]/[FAIL] line per
// criterion; exits non-zero if any gate fails.
//
//   acceptance_tests <tracehound-binary> <fixtures-dir>
//
// C9 (live end-to-end on a tracing-capable host) is a documented runbook in
// the README, not CI-gated; it prints as [MANUAL].
#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "support/generators.hpp"
#include "support/oracles.hpp"
#include "tracehound/bench.hpp"
#include "tracehound/proctree.hpp"
#include "tracehound/profiles.hpp"
#include "tracehound/trace_model.hpp"

using namespace tracehound;
using namespace tracehound::testing;
namespace fs = std::filesystem;

namespace {

int g_failures = 0;

void report(const char* id, bool ok, const std::string& detail) {
  std::printf("[%s] %s %s\n", ok ? "PASS" : "FAIL", id, detail.c_str());
  if (!ok) ++g_failures;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- C1: overhead formula vs the published percentages -----------------

void c1_overhead_formula() {
  BenchStats baseline;
  baseline.mean_ms = 1.026;
  BenchStats usdt = baseline, uprobes = baseline;
  usdt.mean_ms = 1.079;
  uprobes.mean_ms = 1.076;
  const double o_usdt = relative_overhead(usdt, baseline);
  const double o_uprobes = relative_overhead(uprobes, baseline);
  const bool ok = std::round(o_usdt * 100) / 100 == 5.17 &&
                  std::round(o_uprobes * 100) / 100 == 4.87 &&
                  std::abs(o_usdt - 5.1) <= 0.2 && std::abs(o_uprobes - 4.8) <= 0.2;
  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "overhead-formula fidelity: 1.079/1.026 -> %.4f%%, 1.076/1.026 -> %.4f%%",
                o_usdt, o_uprobes);
  report("C1", ok, detail);
}

// --- C2: statistics vs naive oracle -------------------------------------

void c2_statistics_oracle() {
  std::mt19937_64 rng(20250810);
  std::uniform_real_distribution<double> ms(0.25, 40.0);
  std::vector<double> values(1000);
  for (double& v : values) v = std::round(ms(rng) * 1e6) / 1e6;  // whole ns
  std::vector<RunRecord> records;
  for (std::size_t i = 0; i < values.size(); ++i) {
    records.push_back({"cfg", static_cast<std::uint32_t>(i),
                       static_cast<std::uint64_t>(std::llround(values[i] * 1e6)), 0, 0, 0});
  }
  const BenchStats got = summarize(records);
  const OracleStats want = oracle_stats(values);
  auto rel = [](double a, double b) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300});
  };
  const double worst = std::max({rel(got.mean_ms, want.mean), rel(got.stddev_ms, want.stddev),
                                 rel(got.median_ms, want.median), rel(got.min_ms, want.min),
                                 rel(got.max_ms, want.max)});
  char detail[96];
  std::snprintf(detail, sizeof(detail),
                "statistics oracle: worst relative deviation %.3e (allowed 1e-12)", worst);
  report("C2", worst <= 1e-12, detail);
}

// --- C3: off-CPU pairing vs per-tid state machine ------------------------

void c3_pairing_oracle() {
  Rng rng(0xacc3);
  std::size_t checked = 0;
  bool ok = true;
  for (int round = 0; round < 500 && ok; ++round) {
    const std::size_t n = 50 + rng() % 951;   // <= 1000 events
    const std::size_t tids = 1 + rng() % 16;  // <= 16 tids
    const auto events = gen_switch_stream(rng, n, tids);
    PairingResult got = pair_context_switches(events);
    std::sort(got.intervals.begin(), got.intervals.end(),
              [](const OffCpuInterval& a, const OffCpuInterval& b) {
                return std::tuple(a.start_ts, a.tid, a.end_ts) <
                       std::tuple(b.start_ts, b.tid, b.end_ts);
              });
    if (got.intervals != oracle_pair_switches(events)) ok = false;

    std::map<Tid, std::vector<std::pair<TimestampNs, TimestampNs>>> per_tid;
    for (const OffCpuInterval& iv : got.intervals) {
      if (iv.end_ts <= iv.start_ts) ok = false;
      per_tid[iv.tid].emplace_back(iv.start_ts, iv.end_ts);
    }
    for (auto& [tid, list] : per_tid) {
      std::sort(list.begin(), list.end());
      for (std::size_t i = 1; i < list.size(); ++i) {
        if (list[i - 1].second > list[i].first) ok = false;
      }
    }
    checked += got.intervals.size();
  }
  report("C3", ok,
         "off-CPU pairing oracle: 500 fuzzed streams, " + std::to_string(checked) +
             " intervals, disjoint per tid");
}

// --- C4: conservation of weights ----------------------------------------

void c4_conservation() {
  Rng rng(0xacc4);
  bool ok = true;
  for (int round = 0; round < 200 && ok; ++round) {
    const auto events = gen_full_stream(rng, 600, 12);
    const SymbolMap map = gen_symbol_map(rng);

    std::uint64_t period_sum = 0;
    for (const TraceEvent& ev : events) {
      if (ev.kind == EventKind::sample) period_sum += ev.sample().period_ns;
    }
    const Profile on = aggregate_samples(events, map);
    if (on.total_weight() != period_sum) ok = false;

    const PairingResult pairing = pair_context_switches(events);
    std::uint64_t duration_sum = 0;
    for (const OffCpuInterval& iv : pairing.intervals) duration_sum += iv.duration();
    const Profile off = build_offcpu_profile(pairing, map);
    if (off.total_weight() != duration_sum) ok = false;
  }
  report("C4", ok,
         "conservation: on-CPU weights == sample periods, off-CPU weights == durations (exact)");
}

// --- C5: process tree vs flat bookkeeping oracle -------------------------

void c5_proctree_oracle() {
  Rng rng(0xacc5);
  bool ok = true;
  std::size_t nodes_checked = 0;
  for (int round = 0; round < 300 && ok; ++round) {
    const auto events = gen_lifecycle_stream(rng, 120, 10);
    const ProcessTree tree = build_process_tree(events);
    const OracleForest want = oracle_forest(events);
    if (tree.nodes().size() != want.tasks.size()) ok = false;
    for (const OracleTask& task : want.tasks) {
      const TaskNode* node = tree.find({task.pid, task.tid, task.occurrence});
      if (!node || node->spawn_ts != task.spawn || node->exit_ts != task.exit ||
          node->images != task.images || node->synthesized != task.synthesized) {
        ok = false;
        break;
      }
      if (task.parent) {
        const OracleTask& p = want.tasks[*task.parent];
        if (!node->parent || !(*node->parent == TaskKey{p.pid, p.tid, p.occurrence})) ok = false;
      } else if (node->parent) {
        ok = false;
      }
    }
    // acyclicity via parent walks
    for (const auto& [key, node] : tree.nodes()) {
      std::set<TaskKey> seen;
      TaskKey cursor = key;
      while (true) {
        if (!seen.insert(cursor).second) {
          ok = false;
          break;
        }
        const TaskNode* n = tree.find(cursor);
        if (!n->parent) break;
        cursor = *n->parent;
      }
    }
    // disjoint lifetimes per tid
    std::map<Tid, std::vector<std::pair<TimestampNs, TimestampNs>>> lifetimes;
    for (const auto& [key, node] : tree.nodes()) {
      const Lifetime lt = tree.lifetime_of(key);
      lifetimes[key.tid].emplace_back(lt.start, lt.end);
    }
    for (auto& [tid, list] : lifetimes) {
      std::sort(list.begin(), list.end());
      for (std::size_t i = 1; i < list.size(); ++i) {
        if (list[i - 1].second > list[i].first) ok = false;
      }
    }
    nodes_checked += tree.nodes().size();
  }
  report("C5", ok,
         "process-tree oracle: 300 fuzzed lifecycle streams with tid reuse, " +
             std::to_string(nodes_checked) + " nodes");
}

// --- C6: folded round trip + golden bytes --------------------------------

void c6_folded_round_trip(const std::string& bin, const fs::path& fixtures) {
  Rng rng(0xacc6);
  bool round_trip_ok = true;
  for (int round = 0; round < 200 && round_trip_ok; ++round) {
    const Profile profile = gen_profile(rng, 1 + rng() % 40, Profile::Kind::on_cpu);
    const std::string folded = to_folded(profile);
    const Profile back = parse_folded(folded, Profile::Kind::on_cpu);
    if (back.entries != profile.entries || to_folded(back) != folded) round_trip_ok = false;
  }

  const fs::path out = fs::temp_directory_path() / "th_acceptance_replay";
  fs::remove_all(out);
  const std::string cmd = bin + " replay --events " + (fixtures / "demo.trace.jsonl").string() +
                          " --symbols " + (fixtures / "demo.symbols").string() + " --out " +
                          out.string() + " >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  bool golden_ok = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  for (const char* name : {"oncpu.folded", "offcpu.folded", "tree.json", "accounting.json"}) {
    if (slurp(out / name) != slurp(fixtures / "golden" / name)) golden_ok = false;
  }
  report("C6", round_trip_ok && golden_ok,
         std::string("folded round-trip identity on 200 random profiles; golden bytes ") +
             (golden_ok ? "match" : "differ"));
}

// --- C7: workload checksum ------------------------------------------------

void c7_workload() {
  const double got = self_workload(1, 100, 20);
  long double want = 0;
  for (int n = 1; n <= 100; ++n) want += sqrtl(static_cast<long double>(n));
  const double rel = std::abs(got - static_cast<double>(want)) / static_cast<double>(want);
  bool identical = true;
  for (int i = 0; i < 10; ++i) {
    if (self_workload(1, 100, 20) != got) identical = false;
  }
  char detail[128];
  std::snprintf(detail, sizeof(detail),
                "workload checksum %.9f, rel err %.2e vs high-precision reference, bit-stable x10",
                got, rel);
  report("C7", rel <= 1e-6 && identical, detail);
}

// --- C8: methodology smoke reproduction -----------------------------------

void c8_methodology_smoke(const std::string& bin) {
  const fs::path out = fs::temp_directory_path() / "th_acceptance_bench";
  fs::remove_all(out);
  fs::create_directories(out);
  const fs::path plan = out / "plan.json";
  {
    std::ofstream p(plan);
    p << "{\n"
      << "  \"configurations\": [\n"
      << "    {\"name\": \"A\", \"command\": [\"" << bin << "\", \"workload\", \"--repeat\", "
      << "\"400\"]},\n"
      << "    {\"name\": \"B\", \"command\": [\"" << bin << "\", \"workload\", \"--repeat\", "
      << "\"400\"]}\n"
      << "  ],\n"
      << "  \"warmup_runs\": 10,\n"
      << "  \"measured_runs\": 50,\n"
      << "  \"pin_core\": 0,\n"
      << "  \"baseline\": \"A\"\n"
      << "}\n";
  }
  const std::string cmd = bin + " bench --plan " + plan.string() + " --out " + out.string() +
                          " --allow-unpinned >/dev/null 2>/dev/null";
  const int status = std::system(cmd.c_str());
  if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
    report("C8", false, "methodology smoke: bench run failed");
    return;
  }
  const std::string table = slurp(out / "table.txt");
  const bool header_ok =
      table.rfind("Type | Mean (ms) | Stddev (ms) | Median (ms) | Min (ms) | Max (ms)\n", 0) == 0;

  // overhead parsed from the table's overhead line
  const std::string needle = "Relative overhead (B vs A): ";
  const std::size_t pos = table.find(needle);
  double overhead = 1e9;
  if (pos != std::string::npos) {
    overhead = std::strtod(table.c_str() + pos + needle.size(), nullptr);
  }
  char detail[160];
  std::snprintf(detail, sizeof(detail),
                "methodology smoke: two identical no-op configs, warmup 10 + measured 50, "
                "|overhead| = %.3f%% (< 3%%), Table-1 layout %s",
                std::abs(overhead), header_ok ? "exact" : "WRONG");
  report("C8", header_ok && std::abs(overhead) < 3.0, detail);
}

}  // namespace

int main(int argc, char** argv) {
  if (argc < 3) {
    std::cerr << "usage: acceptance_tests <tracehound-binary> <fixtures-dir>\n";
    return 2;
  }
  const std::string bin = argv[1];
  const fs::path fixtures = argv[2];

  c1_overhead_formula();
  c2_statistics_oracle();
  c3_pairing_oracle();
  c4_conservation();
  c5_proctree_oracle();
  c6_folded_round_trip(bin, fixtures);
  c7_workload();
  c8_methodology_smoke(bin);
  std::printf("[MANUAL] C9 live end-to-end on a tracing-capable host; see the runbook in "
              "README.md (not CI-gated)\n");

  if (g_failures) {
    std::printf("%d acceptance criteria FAILED\n", g_failures);
    return 1;
  }
  std::printf("all acceptance criteria passed\n");
  return 0;
}
