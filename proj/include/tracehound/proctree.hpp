#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tracehound/trace_model.hpp"

namespace tracehound {

// Node identity. `gen` is a per-tid generation counter so reused tids get
// distinct nodes.
struct TaskKey {
  Pid pid = 0;
  Tid tid = 0;
  std::uint32_t gen = 0;

  auto operator<=>(const TaskKey&) const = default;
  std::string str() const;
};

// Parses "PID:TID" or "PID:TID:GEN" (gen defaults to 0).
TaskKey parse_task_key(const std::string& text);

struct TaskNode {
  Pid pid = 0;
  Tid tid = 0;
  std::uint32_t gen = 0;
  std::optional<TaskKey> parent;
  TimestampNs spawn_ts = 0;
  std::optional<TimestampNs> exit_ts;
  std::optional<std::int32_t> exit_code;
  std::vector<std::pair<TimestampNs, std::string>> images;
  std::vector<TaskKey> children;
  // True for roots created because the trace began mid-execution (a fork
  // named an unknown parent, or an exec arrived for an unknown task).
  bool synthesized = false;

  TaskKey key() const { return {pid, tid, gen}; }
  bool live_at(TimestampNs ts) const {
    return ts >= spawn_ts && (!exit_ts || ts < *exit_ts);
  }
};

struct Lifetime {
  TimestampNs start = 0;
  TimestampNs end = 0;  // exclusive
  bool truncated = false;

  TimestampNs duration() const { return end - start; }
  bool operator==(const Lifetime&) const = default;
};

// Dynamic forest of task lifetimes. Events must be applied in non-decreasing
// ts order; the completed tree is immutable and shareable.
class ProcessTree {
 public:
  // Applies one Fork/Exec/Exit event (other kinds only advance trace end).
  // Throws TreeError: exit_without_spawn when Exit targets no live tid,
  // duplicate_live_tid when Fork collides with a live tid.
  void apply(const TraceEvent& ev);

  // Advances the trace-end watermark without consuming the event.
  void note_event_ts(TimestampNs ts);

  const std::map<TaskKey, TaskNode>& nodes() const { return nodes_; }
  const std::vector<TaskKey>& roots() const { return roots_; }
  const TaskNode* find(const TaskKey& key) const;
  // Key of the live (un-exited) node for a tid, if any.
  std::optional<TaskKey> live_task(Tid tid) const;

  // Transitive children of `root`, optionally restricted to nodes live at
  // instant `at`. The root itself is not included. Throws unknown_node.
  std::set<TaskKey> descendants_of(const TaskKey& root,
                                   std::optional<TimestampNs> at = std::nullopt) const;

  // Half-open [spawn, exit) interval; un-exited nodes are truncated at trace
  // end. Throws unknown_node.
  Lifetime lifetime_of(const TaskKey& key) const;

  // True when `tid` resolves to a node live at `ts` that is `root` itself or
  // one of its transitive children. Used for scoping profiles to a program.
  bool in_scope(const TaskKey& root, Tid tid, TimestampNs ts) const;

  TimestampNs trace_end() const { return trace_end_; }
  std::size_t accepted_forks() const { return accepted_forks_; }
  std::size_t synthesized_roots() const { return synthesized_roots_; }

  // Schema: {roots:[...], nodes:{"pid:tid:gen":{...}}}, keys in (pid,tid,gen)
  // order.
  std::string to_json(int indent = 2) const;

 private:
  TaskKey new_node(Pid pid, Tid tid, TimestampNs spawn_ts, std::optional<TaskKey> parent,
                   bool synthesized);

  std::map<TaskKey, TaskNode> nodes_;
  std::vector<TaskKey> roots_;
  std::map<Tid, TaskKey> live_;
  std::multimap<Tid, TaskKey> by_tid_;
  std::map<Tid, std::uint32_t> next_gen_;
  TimestampNs trace_end_ = 0;
  std::size_t accepted_forks_ = 0;
  std::size_t synthesized_roots_ = 0;
};

// Applies all lifecycle events and advances trace end over every event.
ProcessTree build_process_tree(std::span<const TraceEvent> events);

}  // namespace tracehound
