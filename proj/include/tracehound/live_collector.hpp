#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tracehound/trace_model.hpp"

namespace tracehound {

enum class AttachMode {
  uprobes,
  usdt,
  tracepoints,
};

struct LiveSessionConfig {
  std::vector<std::string> command;
  std::optional<std::uint64_t> sample_period_ns;
  bool enable_sampling = false;
  bool enable_sched = false;
  bool enable_lifecycle = false;
  // Lifecycle hook mechanism. v1 ships one built-in adapter (kernel process
  // tracing of the command's own task tree); the mode is recorded so
  // per-platform probe adapters can key off it.
  AttachMode attach_mode = AttachMode::tracepoints;
  // Replay-format JSONL destination; empty keeps events in memory only.
  std::string output_path;

  // At least one enable_* must be set; sampling requires a period > 0.
  void validate() const;
};

struct CapabilityReport {
  bool tracing_available = false;
  bool lifecycle_ok = false;
  bool sampling_ok = false;
  bool sched_ok = false;
  std::vector<std::string> reasons;
};

// Detects whether this host permits the three tracing facilities. Read-only
// and unprivileged: it dry-runs the actual attach mechanisms against the
// current process (plus one short-lived child for the lifecycle check).
// TRACEHOUND_FORCE_NO_LIVE=1 forces an unavailable report for CI determinism.
CapabilityReport capability_probe();

struct SessionResult {
  int child_exit_code = 0;  // 128+sig when the child died to a signal
  std::size_t events_written = 0;
  std::string output_path;
  std::vector<TraceEvent> events;
};

// Spawns the command held, attaches the requested probes before the first
// instruction of the new image executes, streams TraceEvents, and closes the
// output at child exit. The produced file always parses with
// parse_event_stream. Sampling and context-switch tracing cover the root
// task; lifecycle tracing covers the whole spawned task tree.
// Throws LiveError: capability_denied (before any spawn), attach_failure,
// child_spawn_failure.
SessionResult record(const LiveSessionConfig& config);

std::string to_string(AttachMode mode);
std::optional<AttachMode> attach_mode_from_string(const std::string& text);

}  // namespace tracehound
