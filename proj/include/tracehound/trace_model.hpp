#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "tracehound/errors.hpp"

namespace tracehound {

using Pid = std::uint64_t;
using Tid = std::uint64_t;
using TimestampNs = std::uint64_t;

enum class EventKind {
  sample,
  switch_out,
  switch_in,
  fork,
  exec,
  exit,
};

enum class WaitKind {
  runnable,
  blocked,
  unknown,
};

struct SamplePayload {
  // Frame addresses, leaf first.
  std::vector<std::uint64_t> stack;
  std::uint64_t period_ns = 0;

  bool operator==(const SamplePayload&) const = default;
};

struct SchedSwitchPayload {
  WaitKind wait = WaitKind::unknown;
  // Captured at switch-out only; switch-in events never carry a stack.
  std::optional<std::vector<std::uint64_t>> stack;

  bool operator==(const SchedSwitchPayload&) const = default;
};

struct ForkPayload {
  Pid parent_pid = 0;
  Tid parent_tid = 0;
  Pid child_pid = 0;
  Tid child_tid = 0;

  bool operator==(const ForkPayload&) const = default;
};

struct ExecPayload {
  std::string image;

  bool operator==(const ExecPayload&) const = default;
};

struct ExitPayload {
  std::int32_t exit_code = 0;

  bool operator==(const ExitPayload&) const = default;
};

using EventPayload =
    std::variant<SamplePayload, SchedSwitchPayload, ForkPayload, ExecPayload, ExitPayload>;

// One record of the replay stream. Timestamps are integer nanoseconds since
// the trace origin and must be non-decreasing within a single cpu.
struct TraceEvent {
  EventKind kind = EventKind::sample;
  TimestampNs ts = 0;
  Pid pid = 0;
  Tid tid = 0;
  std::uint32_t cpu = 0;
  EventPayload payload = SamplePayload{};

  const SamplePayload& sample() const { return std::get<SamplePayload>(payload); }
  const SchedSwitchPayload& sched() const { return std::get<SchedSwitchPayload>(payload); }
  const ForkPayload& fork() const { return std::get<ForkPayload>(payload); }
  const ExecPayload& exec() const { return std::get<ExecPayload>(payload); }
  const ExitPayload& exit() const { return std::get<ExitPayload>(payload); }

  bool operator==(const TraceEvent&) const = default;
};

TraceEvent make_sample(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu,
                       std::vector<std::uint64_t> stack, std::uint64_t period_ns);
TraceEvent make_switch_out(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu,
                           WaitKind wait = WaitKind::unknown,
                           std::optional<std::vector<std::uint64_t>> stack = std::nullopt);
TraceEvent make_switch_in(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu);
TraceEvent make_fork(TimestampNs ts, Pid parent_pid, Tid parent_tid, std::uint32_t cpu,
                     Pid child_pid, Tid child_tid);
TraceEvent make_exec(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu, std::string image);
TraceEvent make_exit(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu, std::int32_t exit_code);

// Parses the JSONL replay format. Events come back in file order; blank lines
// are skipped. Throws ParseError: malformed_line on unparsable JSON,
// schema_violation on missing/ill-typed/unknown fields, and
// non_monotone_timestamp when ts regresses within one cpu value.
std::vector<TraceEvent> parse_event_stream(std::istream& in);
std::vector<TraceEvent> parse_event_stream(const std::string& text);

// Canonical serialization: fixed field order, lowercase minimal hex for
// frame addresses, one event per line, trailing newline (empty -> "").
std::string serialize_event(const TraceEvent& ev);
std::string serialize_events(std::span<const TraceEvent> events);

// Merges per-CPU streams into one stream sorted by (ts, cpu, origin index),
// where origin index is the position in the concatenation of the inputs in
// the order given. Stable for equal keys.
std::vector<TraceEvent> merge_streams(const std::vector<std::vector<TraceEvent>>& streams);

// Splits a file-order event list into per-cpu streams (order preserved),
// suitable for merge_streams.
std::vector<std::vector<TraceEvent>> split_by_cpu(std::span<const TraceEvent> events);

struct TraceWarning {
  enum class Code {
    unmatched_switch_in,
    sample_outside_lifetime,
    duplicate_live_fork,
  };

  Code code;
  Tid tid = 0;
  TimestampNs ts = 0;
  std::string message;

  bool operator==(const TraceWarning&) const = default;
};

// Single pass over a globally time-ordered stream; never mutates or throws.
// Lifetimes are established by Fork (child) and Exit events seen so far; a
// sample of a tid with no lifecycle history is not warned about, since the
// trace may have started mid-execution.
std::vector<TraceWarning> validate_trace(std::span<const TraceEvent> events);

std::string to_string(EventKind kind);
std::string to_string(WaitKind wait);

}  // namespace tracehound
