#include "tracehound/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "support/oracles.hpp"

using namespace tracehound;
using namespace tracehound::testing;

namespace {

std::vector<RunRecord> records_of(const std::vector<double>& wall_ms, const std::string& name) {
  std::vector<RunRecord> out;
  for (std::size_t i = 0; i < wall_ms.size(); ++i) {
    out.push_back({name, static_cast<std::uint32_t>(i),
                   static_cast<std::uint64_t>(wall_ms[i] * 1e6), 0, 0, 0});
  }
  return out;
}

BenchStats stats_with_mean(double mean_ms) {
  BenchStats s;
  s.config_name = "x";
  s.mean_ms = mean_ms;
  s.n = 2;
  return s;
}

}  // namespace

TEST_CASE("summarize: {1,2,3} ms has unit stddev") {
  const BenchStats s = summarize(records_of({1, 2, 3}, "a"));
  CHECK(s.mean_ms == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.stddev_ms == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.median_ms == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(s.min_ms == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.max_ms == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(s.n == 3);
}

TEST_CASE("summarize: constant series and even-n median") {
  const BenchStats s = summarize(records_of({5, 5, 5, 5}, "a"));
  CHECK(s.stddev_ms == 0.0);
  CHECK(s.median_ms == 5.0);

  const BenchStats e = summarize(records_of({1, 2, 3, 10}, "a"));
  CHECK(e.median_ms == doctest::Approx(2.5).epsilon(1e-12));
}

TEST_CASE("summarize: fewer than 2 runs is an error") {
  CHECK_THROWS_AS(summarize(records_of({1}, "a")), StatsError);
  CHECK_THROWS_AS(summarize({}), StatsError);
}

TEST_CASE("summarize: 1000 random durations match the naive oracle to 1e-12 relative") {
  std::mt19937_64 rng(0xbe9c);
  std::uniform_real_distribution<double> ms(0.5, 20.0);
  std::vector<double> values(1000);
  for (double& v : values) v = ms(rng);
  // quantize to whole ns like real records
  for (double& v : values) v = std::round(v * 1e6) / 1e6;

  const BenchStats got = summarize(records_of(values, "a"));
  const OracleStats want = oracle_stats(values);
  auto close_rel = [](double a, double b) {
    return std::abs(a - b) <= 1e-12 * std::max({std::abs(a), std::abs(b), 1.0});
  };
  CHECK(close_rel(got.mean_ms, want.mean));
  CHECK(close_rel(got.stddev_ms, want.stddev));
  CHECK(close_rel(got.median_ms, want.median));
  CHECK(got.min_ms == want.min);
  CHECK(got.max_ms == want.max);
}

TEST_CASE("summarize: permutation invariant") {
  std::mt19937_64 rng(0x9e47);
  std::vector<double> values = {3.25, 1.5, 9.75, 2.0, 2.0, 4.125, 8.5};
  const BenchStats a = summarize(records_of(values, "a"));
  for (int round = 0; round < 10; ++round) {
    std::shuffle(values.begin(), values.end(), rng);
    const BenchStats b = summarize(records_of(values, "a"));
    CHECK(a.mean_ms == b.mean_ms);
    CHECK(a.stddev_ms == b.stddev_ms);
    CHECK(a.median_ms == b.median_ms);
    CHECK(a.min_ms == b.min_ms);
    CHECK(a.max_ms == b.max_ms);
  }
}

TEST_CASE("relative overhead: reproduces the published USDT/Uprobes percentages") {
  const BenchStats baseline = stats_with_mean(1.026);
  const double usdt = relative_overhead(stats_with_mean(1.079), baseline);
  const double uprobes = relative_overhead(stats_with_mean(1.076), baseline);
  // rounded to 2 decimals these are 5.17% and 4.87%
  CHECK(std::round(usdt * 100) / 100 == doctest::Approx(5.17));
  CHECK(std::round(uprobes * 100) / 100 == doctest::Approx(4.87));
  // within 0.2 percentage points of the published 5.1% / 4.8%
  CHECK(std::abs(usdt - 5.1) <= 0.2);
  CHECK(std::abs(uprobes - 4.8) <= 0.2);
}

TEST_CASE("relative overhead: identity, sign, and zero baseline") {
  const BenchStats x = stats_with_mean(3.5);
  CHECK(relative_overhead(x, x) == 0.0);
  const double up = relative_overhead(stats_with_mean(3.5 + 0.7), x);
  const double down = relative_overhead(stats_with_mean(3.5 - 0.7), x);
  CHECK(up > 0);
  CHECK(down < 0);
  CHECK(up == doctest::Approx(-down).epsilon(1e-12));
  CHECK_THROWS_AS(relative_overhead(x, stats_with_mean(0)), StatsError);
}

TEST_CASE("sys/user breakdown: totals and means") {
  std::vector<RunRecord> records = {
      {"a", 0, 1, 1'000'000, 500'000, 0},
      {"a", 1, 1, 1'000'000, 500'000, 0},
  };
  const Breakdown b = sys_user_breakdown(records);
  CHECK(b.user_ms_total == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(b.sys_ms_total == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.user_ms_mean == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(b.sys_ms_mean == doctest::Approx(0.5).epsilon(1e-12));

  for (RunRecord& r : records) r.sys_ns = 0;
  CHECK(sys_user_breakdown(records).sys_ms_total == 0.0);

  std::mt19937_64 rng(0xb0b);
  std::vector<RunRecord> random;
  double user_want = 0, sys_want = 0;
  for (int i = 0; i < 100; ++i) {
    const std::uint64_t u = rng() % 10'000'000, s = rng() % 10'000'000;
    random.push_back({"r", static_cast<std::uint32_t>(i), 1, u, s, 0});
    user_want += static_cast<double>(u) / 1e6;
    sys_want += static_cast<double>(s) / 1e6;
  }
  const Breakdown rb = sys_user_breakdown(random);
  CHECK(rb.user_ms_total == doctest::Approx(user_want).epsilon(1e-12));
  CHECK(rb.sys_ms_total == doctest::Approx(sys_want).epsilon(1e-12));
}

TEST_CASE("workload: perfect squares converge and n=1 is a fixed point") {
  CHECK(self_workload(4, 4, 20) == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(self_workload(1, 1, 20) == 1.0);
  CHECK_THROWS_AS(self_workload(0, 4, 20), StatsError);
  CHECK_THROWS_AS(self_workload(5, 4, 20), StatsError);
  CHECK_THROWS_AS(self_workload(1, 4, 0), StatsError);
}

TEST_CASE("workload: checksum matches high-precision sum of square roots") {
  const double got = self_workload(1, 100, 20);
  long double want = 0;
  for (int n = 1; n <= 100; ++n) want += sqrtl(static_cast<long double>(n));
  CHECK(std::abs(got - static_cast<double>(want)) <=
        1e-6 * static_cast<double>(want));

  for (int i = 0; i < 10; ++i) {
    CHECK(self_workload(1, 100, 20) == got);  // bit-identical
  }
}

TEST_CASE("plan: parse, defaults, and validation failures") {
  const std::string good = R"({
    "configurations": [
      {"name": "base", "command": ["true"]},
      {"name": "cand", "command": ["true"], "env": {"K": "v"}, "instrumentation": "usdt"}
    ],
    "warmup_runs": 2, "measured_runs": 5, "pin_core": 0, "baseline": "base"
  })";
  const BenchPlan plan = BenchPlan::parse(good);
  CHECK(plan.configurations.size() == 2);
  CHECK(plan.configurations[1].env.at("K") == "v");
  CHECK(plan.configurations[1].instrumentation == Instrumentation::usdt);
  CHECK(plan.pin_core == 0u);

  auto expect_error = [](const std::string& text, const std::string& field) {
    try {
      BenchPlan::parse(text);
      FAIL("expected InputError for ", field);
    } catch (const InputError& e) {
      CHECK(std::string(e.what()).find(field) != std::string::npos);
    }
  };
  expect_error(R"({"configurations":[{"name":"a","command":["true"]}],
                   "warmup_runs":0,"measured_runs":1,"baseline":"a"})",
               "measured_runs");
  expect_error(R"({"configurations":[{"name":"a","command":["true"]}],
                   "warmup_runs":0,"measured_runs":2})",
               "baseline");
  expect_error(R"({"configurations":[{"name":"a","command":["true"]}],
                   "warmup_runs":0,"measured_runs":2,"baseline":"nope"})",
               "baseline");
  expect_error(R"({"configurations":[{"name":"a","command":["true"]},
                                     {"name":"a","command":["true"]}],
                   "warmup_runs":0,"measured_runs":2,"baseline":"a"})",
               "name");
  expect_error(R"({"configurations":[{"name":"a","command":[]}],
                   "warmup_runs":0,"measured_runs":2,"baseline":"a"})",
               "command");
  expect_error(R"({"configurations":[{"name":"a","command":["true"],"bogus":1}],
                   "warmup_runs":0,"measured_runs":2,"baseline":"a"})",
               "bogus");
  expect_error("{nope", "JSON");
}

TEST_CASE("run_benchmark: warm-ups are discarded, measured runs recorded") {
  BenchPlan plan;
  plan.configurations = {{"noop", {"true"}, {}, Instrumentation::none}};
  plan.warmup_runs = 2;
  plan.measured_runs = 5;
  plan.baseline = "noop";
  const BenchOutcome outcome = run_benchmark(plan, PinPolicy{true});
  REQUIRE(outcome.records.size() == 5);  // == configs x measured_runs
  for (const RunRecord& r : outcome.records) {
    CHECK(r.exit_code == 0);
    CHECK(r.wall_ns > 0);
    CHECK(r.config_name == "noop");
  }
  for (std::uint32_t i = 0; i < 5; ++i) CHECK(outcome.records[i].run_index == i);
}

TEST_CASE("run_benchmark: non-zero exit is fatal after the retry cap") {
  BenchPlan plan;
  plan.configurations = {{"fail", {"false"}, {}, Instrumentation::none}};
  plan.warmup_runs = 0;
  plan.measured_runs = 2;
  plan.baseline = "fail";
  try {
    run_benchmark(plan, PinPolicy{true});
    FAIL("expected BenchRunError");
  } catch (const BenchRunError& e) {
    CHECK(e.code == BenchRunError::Code::non_zero_exit);
    CHECK(e.config == "fail");
    CHECK(e.exit_code == 1);
  }
}

TEST_CASE("run_benchmark: unknown command is a spawn failure") {
  BenchPlan plan;
  plan.configurations = {
      {"ghost", {"/nonexistent/tracehound-test-binary"}, {}, Instrumentation::none}};
  plan.warmup_runs = 0;
  plan.measured_runs = 2;
  plan.baseline = "ghost";
  try {
    run_benchmark(plan, PinPolicy{true});
    FAIL("expected BenchRunError");
  } catch (const BenchRunError& e) {
    CHECK(e.code == BenchRunError::Code::spawn_failure);
  }
}

TEST_CASE("run_benchmark: environment overrides reach the child") {
  namespace fs = std::filesystem;
  const fs::path out = fs::temp_directory_path() / "th_env_test.out";
  fs::remove(out);
  BenchPlan plan;
  plan.configurations = {{"env",
                          {"sh", "-c", "printf %s \"$TH_TEST_VALUE\" > " + out.string()},
                          {{"TH_TEST_VALUE", "hello"}},
                          Instrumentation::none}};
  plan.warmup_runs = 0;
  plan.measured_runs = 2;
  plan.baseline = "env";
  (void)run_benchmark(plan, PinPolicy{true});
  std::ifstream in(out);
  std::string value;
  in >> value;
  CHECK(value == "hello");
  fs::remove(out);
}

TEST_CASE("pinning: invalid core and unpinned policy") {
  BenchPlan plan;
  plan.configurations = {{"noop", {"true"}, {}, Instrumentation::none}};
  plan.warmup_runs = 0;
  plan.measured_runs = 2;
  plan.baseline = "noop";

  plan.pin_core = static_cast<std::uint32_t>(host_cpu_count());  // one past the end
  try {
    run_benchmark(plan, PinPolicy{false});
    FAIL("expected BenchRunError");
  } catch (const BenchRunError& e) {
    CHECK(e.code == BenchRunError::Code::pin_unsupported);
  }
  // --allow-unpinned downgrades to a warning
  const BenchOutcome relaxed = run_benchmark(plan, PinPolicy{true});
  CHECK(relaxed.records.size() == 2);
  CHECK_FALSE(relaxed.pinned);
  REQUIRE(!relaxed.warnings.empty());

  // no pin_core in the plan: explicit opt-in required
  plan.pin_core.reset();
  CHECK_THROWS_AS(run_benchmark(plan, PinPolicy{false}), BenchRunError);
  const BenchOutcome unpinned = run_benchmark(plan, PinPolicy{true});
  CHECK(!unpinned.warnings.empty());
}

TEST_CASE("pinning: children actually land on the requested core") {
  if (!affinity_supported()) return;  // nothing to check on this host
  namespace fs = std::filesystem;
  const fs::path out = fs::temp_directory_path() / "th_affinity_test.out";
  fs::remove(out);
  BenchPlan plan;
  plan.configurations = {
      {"probe", {AFFINITY_PROBE_PATH, out.string()}, {}, Instrumentation::none}};
  plan.warmup_runs = 0;
  plan.measured_runs = 2;
  plan.pin_core = 0;
  plan.baseline = "probe";
  const BenchOutcome outcome = run_benchmark(plan, PinPolicy{false});
  CHECK(outcome.pinned);
  std::ifstream in(out);
  std::string cores;
  in >> cores;
  CHECK(cores == "0");
  fs::remove(out);
}

TEST_CASE("trim drops tails; table renders the exact column layout") {
  const std::vector<RunRecord> records = records_of({9, 1, 2, 3, 4, 5, 6, 7, 8, 10}, "a");
  const std::vector<RunRecord> kept = trim_records(records, 0.1);
  CHECK(kept.size() == 8);
  CHECK(kept.front().wall_ns == 2'000'000);
  CHECK(kept.back().wall_ns == 9'000'000);
  CHECK(trim_records(records, 0.0).size() == 10);
  CHECK_THROWS_AS(trim_records(records, 0.5), InputError);

  BenchStats base = summarize(records_of({1.0005, 1.0005, 1.0004, 1.0006}, "Baseline"));
  BenchStats cand = summarize(records_of({1.079, 1.079, 1.079, 1.079}, "USDT"));
  base.config_name = "Baseline";
  cand.config_name = "USDT";
  const std::string table = render_table(std::vector<BenchStats>{base, cand}, "Baseline");
  CHECK(table.find("Type | Mean (ms) | Stddev (ms) | Median (ms) | Min (ms) | Max (ms)\n") == 0);
  CHECK(table.find("USDT | 1.079 | 0.000 | 1.079 | 1.079 | 1.079\n") != std::string::npos);
  CHECK(table.find("Baseline | 1.001 | 0.000 | 1.001 | 1.000 | 1.001\n") != std::string::npos);
  CHECK(table.find("Relative overhead (USDT vs Baseline): +7.8") != std::string::npos);
}
