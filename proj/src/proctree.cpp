#include "tracehound/proctree.hpp"

#include <algorithm>
#include <charconv>
#include <deque>

#include "json.hpp"

namespace tracehound {

namespace {

std::uint64_t parse_u64_field(const std::string& text, std::size_t from, std::size_t to) {
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(text.data() + from, text.data() + to, out, 10);
  if (ec != std::errc{} || ptr != text.data() + to) {
    throw InputError("invalid task key '" + text + "', expected PID:TID[:GEN]");
  }
  return out;
}

}  // namespace

std::string TaskKey::str() const {
  return std::to_string(pid) + ":" + std::to_string(tid) + ":" + std::to_string(gen);
}

TaskKey parse_task_key(const std::string& text) {
  const std::size_t c1 = text.find(':');
  if (c1 == std::string::npos) {
    throw InputError("invalid task key '" + text + "', expected PID:TID[:GEN]");
  }
  const std::size_t c2 = text.find(':', c1 + 1);
  TaskKey key;
  key.pid = parse_u64_field(text, 0, c1);
  key.tid = parse_u64_field(text, c1 + 1, c2 == std::string::npos ? text.size() : c2);
  if (c2 != std::string::npos) {
    key.gen = static_cast<std::uint32_t>(parse_u64_field(text, c2 + 1, text.size()));
  }
  return key;
}

void ProcessTree::apply(const TraceEvent& ev) {
  note_event_ts(ev.ts);
  switch (ev.kind) {
    case EventKind::fork: {
      const ForkPayload& p = ev.fork();
      if (live_.count(p.child_tid)) {
        throw TreeError(TreeError::Code::duplicate_live_tid, p.child_tid,
                        "fork of tid " + std::to_string(p.child_tid) +
                            " which is already live at ts " + std::to_string(ev.ts));
      }
      std::optional<TaskKey> parent_key;
      if (auto it = live_.find(p.parent_tid); it != live_.end()) {
        parent_key = it->second;
      } else {
        // Trace began mid-execution: stand in a root for the unknown parent.
        parent_key = new_node(p.parent_pid, p.parent_tid, ev.ts, std::nullopt, true);
      }
      const TaskKey child = new_node(p.child_pid, p.child_tid, ev.ts, parent_key, false);
      nodes_[*parent_key].children.push_back(child);
      ++accepted_forks_;
      break;
    }
    case EventKind::exec: {
      TaskKey key;
      if (auto it = live_.find(ev.tid); it != live_.end()) {
        key = it->second;
      } else {
        key = new_node(ev.pid, ev.tid, ev.ts, std::nullopt, true);
      }
      nodes_[key].images.emplace_back(ev.ts, ev.exec().image);
      break;
    }
    case EventKind::exit: {
      auto it = live_.find(ev.tid);
      if (it == live_.end()) {
        throw TreeError(TreeError::Code::exit_without_spawn, ev.tid,
                        "exit for tid " + std::to_string(ev.tid) + " with no live task at ts " +
                            std::to_string(ev.ts));
      }
      TaskNode& node = nodes_[it->second];
      node.exit_ts = ev.ts;
      node.exit_code = ev.exit().exit_code;
      live_.erase(it);
      break;
    }
    default:
      break;
  }
}

void ProcessTree::note_event_ts(TimestampNs ts) { trace_end_ = std::max(trace_end_, ts); }

TaskKey ProcessTree::new_node(Pid pid, Tid tid, TimestampNs spawn_ts,
                              std::optional<TaskKey> parent, bool synthesized) {
  TaskNode node;
  node.pid = pid;
  node.tid = tid;
  node.gen = next_gen_[tid]++;
  node.parent = parent;
  node.spawn_ts = spawn_ts;
  node.synthesized = synthesized;
  const TaskKey key = node.key();
  nodes_.emplace(key, std::move(node));
  live_.emplace(tid, key);
  by_tid_.emplace(tid, key);
  if (!parent) {
    roots_.push_back(key);
    if (synthesized) ++synthesized_roots_;
  }
  return key;
}

const TaskNode* ProcessTree::find(const TaskKey& key) const {
  auto it = nodes_.find(key);
  return it == nodes_.end() ? nullptr : &it->second;
}

std::optional<TaskKey> ProcessTree::live_task(Tid tid) const {
  auto it = live_.find(tid);
  if (it == live_.end()) return std::nullopt;
  return it->second;
}

std::set<TaskKey> ProcessTree::descendants_of(const TaskKey& root,
                                              std::optional<TimestampNs> at) const {
  const TaskNode* root_node = find(root);
  if (!root_node) {
    throw TreeError(TreeError::Code::unknown_node, root.tid, "unknown node " + root.str());
  }
  std::set<TaskKey> out;
  std::deque<TaskKey> frontier(root_node->children.begin(), root_node->children.end());
  while (!frontier.empty()) {
    const TaskKey key = frontier.front();
    frontier.pop_front();
    const TaskNode& node = nodes_.at(key);
    if (!at || node.live_at(*at)) out.insert(key);
    frontier.insert(frontier.end(), node.children.begin(), node.children.end());
  }
  return out;
}

Lifetime ProcessTree::lifetime_of(const TaskKey& key) const {
  const TaskNode* node = find(key);
  if (!node) {
    throw TreeError(TreeError::Code::unknown_node, key.tid, "unknown node " + key.str());
  }
  if (node->exit_ts) return {node->spawn_ts, *node->exit_ts, false};
  return {node->spawn_ts, std::max(trace_end_, node->spawn_ts), true};
}

bool ProcessTree::in_scope(const TaskKey& root, Tid tid, TimestampNs ts) const {
  // Find the generation of `tid` live at `ts`, then walk up to `root`.
  auto [lo, hi] = by_tid_.equal_range(tid);
  for (auto it = lo; it != hi; ++it) {
    const TaskNode& node = nodes_.at(it->second);
    if (!node.live_at(ts)) continue;
    TaskKey cursor = node.key();
    while (true) {
      if (cursor == root) return true;
      const TaskNode& c = nodes_.at(cursor);
      if (!c.parent) return false;
      cursor = *c.parent;
    }
  }
  return false;
}

std::string ProcessTree::to_json(int indent) const {
  nlohmann::ordered_json doc;
  auto roots = nlohmann::ordered_json::array();
  for (const TaskKey& key : roots_) roots.push_back(key.str());
  doc["roots"] = std::move(roots);
  auto nodes = nlohmann::ordered_json::object();
  for (const auto& [key, node] : nodes_) {
    nlohmann::ordered_json n;
    n["pid"] = node.pid;
    n["tid"] = node.tid;
    n["gen"] = node.gen;
    n["parent"] = node.parent ? nlohmann::ordered_json(node.parent->str())
                              : nlohmann::ordered_json(nullptr);
    n["spawn_ts"] = node.spawn_ts;
    n["exit_ts"] = node.exit_ts ? nlohmann::ordered_json(*node.exit_ts)
                                : nlohmann::ordered_json(nullptr);
    n["exit_code"] = node.exit_code ? nlohmann::ordered_json(*node.exit_code)
                                    : nlohmann::ordered_json(nullptr);
    auto images = nlohmann::ordered_json::array();
    for (const auto& [ts, image] : node.images) {
      images.push_back(nlohmann::ordered_json::array({ts, image}));
    }
    n["images"] = std::move(images);
    auto children = nlohmann::ordered_json::array();
    for (const TaskKey& child : node.children) children.push_back(child.str());
    n["children"] = std::move(children);
    n["synthesized"] = node.synthesized;
    nodes[key.str()] = std::move(n);
  }
  doc["nodes"] = std::move(nodes);
  return doc.dump(indent) + "\n";
}

ProcessTree build_process_tree(std::span<const TraceEvent> events) {
  ProcessTree tree;
  for (const TraceEvent& ev : events) {
    switch (ev.kind) {
      case EventKind::fork:
      case EventKind::exec:
      case EventKind::exit:
        tree.apply(ev);
        break;
      default:
        tree.note_event_ts(ev.ts);
        break;
    }
  }
  return tree;
}

}  // namespace tracehound
