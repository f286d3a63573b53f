#include "tracehound/trace_model.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace tracehound {

namespace {

using nlohmann::json;
using ordered_json = nlohmann::ordered_json;

std::string hex_addr(std::uint64_t addr) {
  char buf[2 + 16 + 1];
  std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(addr));
  return buf;
}

[[noreturn]] void schema_error(std::size_t line, const std::string& field, const std::string& why) {
  throw ParseError(ParseError::Code::schema_violation, line, field,
                   "line " + std::to_string(line) + ": field '" + field + "': " + why);
}

std::uint64_t require_u64(const json& obj, const char* field, std::size_t line) {
  auto it = obj.find(field);
  if (it == obj.end()) schema_error(line, field, "missing");
  if (!it->is_number_unsigned()) schema_error(line, field, "expected unsigned integer");
  return it->get<std::uint64_t>();
}

std::uint64_t parse_hex_string(const json& value, std::size_t line, const char* field) {
  if (!value.is_string()) schema_error(line, field, "expected hex string");
  const std::string& s = value.get_ref<const std::string&>();
  if (s.size() < 3 || s[0] != '0' || (s[1] != 'x' && s[1] != 'X')) {
    schema_error(line, field, "expected \"0x...\" hex string");
  }
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(s.data() + 2, s.data() + s.size(), out, 16);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    schema_error(line, field, "invalid hex value '" + s + "'");
  }
  return out;
}

std::vector<std::uint64_t> parse_stack(const json& value, std::size_t line) {
  if (!value.is_array()) schema_error(line, "stack", "expected array of hex strings");
  std::vector<std::uint64_t> stack;
  stack.reserve(value.size());
  for (const auto& frame : value) {
    stack.push_back(parse_hex_string(frame, line, "stack"));
  }
  return stack;
}

void reject_unknown_fields(const json& obj, const std::set<std::string>& allowed,
                           std::size_t line) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    if (!allowed.count(it.key())) schema_error(line, it.key(), "unknown field");
  }
}

TraceEvent parse_record(const json& obj, std::size_t line) {
  if (!obj.is_object()) schema_error(line, "<record>", "expected a JSON object");
  auto kind_it = obj.find("kind");
  if (kind_it == obj.end()) schema_error(line, "kind", "missing");
  if (!kind_it->is_string()) schema_error(line, "kind", "expected string");
  const std::string& kind = kind_it->get_ref<const std::string&>();

  TraceEvent ev;
  ev.ts = require_u64(obj, "ts", line);
  ev.pid = require_u64(obj, "pid", line);
  ev.tid = require_u64(obj, "tid", line);
  if (ev.pid < 1) schema_error(line, "pid", "must be >= 1");
  if (ev.tid < 1) schema_error(line, "tid", "must be >= 1");
  const std::uint64_t cpu = require_u64(obj, "cpu", line);
  if (cpu > 0xffffffffull) schema_error(line, "cpu", "exceeds u32 range");
  ev.cpu = static_cast<std::uint32_t>(cpu);

  const std::set<std::string> base = {"kind", "ts", "pid", "tid", "cpu"};

  if (kind == "sample") {
    std::set<std::string> allowed = base;
    allowed.insert({"stack", "period"});
    reject_unknown_fields(obj, allowed, line);
    SamplePayload p;
    auto stack_it = obj.find("stack");
    if (stack_it == obj.end()) schema_error(line, "stack", "missing");
    p.stack = parse_stack(*stack_it, line);
    if (p.stack.empty()) schema_error(line, "stack", "must be non-empty");
    p.period_ns = require_u64(obj, "period", line);
    if (p.period_ns == 0) schema_error(line, "period", "must be > 0");
    ev.kind = EventKind::sample;
    ev.payload = std::move(p);
  } else if (kind == "switch_out") {
    std::set<std::string> allowed = base;
    allowed.insert({"stack", "wait"});
    reject_unknown_fields(obj, allowed, line);
    SchedSwitchPayload p;
    if (auto it = obj.find("stack"); it != obj.end()) {
      p.stack = parse_stack(*it, line);
    }
    if (auto it = obj.find("wait"); it != obj.end()) {
      if (!it->is_string()) schema_error(line, "wait", "expected string");
      const std::string& w = it->get_ref<const std::string&>();
      if (w == "runnable") {
        p.wait = WaitKind::runnable;
      } else if (w == "blocked") {
        p.wait = WaitKind::blocked;
      } else {
        schema_error(line, "wait", "expected 'runnable' or 'blocked', got '" + w + "'");
      }
    }
    ev.kind = EventKind::switch_out;
    ev.payload = std::move(p);
  } else if (kind == "switch_in") {
    reject_unknown_fields(obj, base, line);
    ev.kind = EventKind::switch_in;
    ev.payload = SchedSwitchPayload{};
  } else if (kind == "fork") {
    std::set<std::string> allowed = base;
    allowed.insert({"child_pid", "child_tid"});
    reject_unknown_fields(obj, allowed, line);
    ForkPayload p;
    p.parent_pid = ev.pid;
    p.parent_tid = ev.tid;
    p.child_pid = require_u64(obj, "child_pid", line);
    p.child_tid = require_u64(obj, "child_tid", line);
    if (p.child_pid < 1) schema_error(line, "child_pid", "must be >= 1");
    if (p.child_tid < 1) schema_error(line, "child_tid", "must be >= 1");
    ev.kind = EventKind::fork;
    ev.payload = p;
  } else if (kind == "exec") {
    std::set<std::string> allowed = base;
    allowed.insert("image");
    reject_unknown_fields(obj, allowed, line);
    auto it = obj.find("image");
    if (it == obj.end()) schema_error(line, "image", "missing");
    if (!it->is_string()) schema_error(line, "image", "expected string");
    ev.kind = EventKind::exec;
    ev.payload = ExecPayload{it->get<std::string>()};
  } else if (kind == "exit") {
    std::set<std::string> allowed = base;
    allowed.insert("exit_code");
    reject_unknown_fields(obj, allowed, line);
    auto it = obj.find("exit_code");
    if (it == obj.end()) schema_error(line, "exit_code", "missing");
    if (!it->is_number_integer()) schema_error(line, "exit_code", "expected integer");
    const std::int64_t code = it->get<std::int64_t>();
    if (code < INT32_MIN || code > INT32_MAX) schema_error(line, "exit_code", "exceeds i32 range");
    ev.kind = EventKind::exit;
    ev.payload = ExitPayload{static_cast<std::int32_t>(code)};
  } else {
    schema_error(line, "kind", "unknown kind '" + kind + "'");
  }
  return ev;
}

bool blank_line(const std::string& line) {
  return line.find_first_not_of(" \t\r") == std::string::npos;
}

}  // namespace

TraceEvent make_sample(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu,
                       std::vector<std::uint64_t> stack, std::uint64_t period_ns) {
  return {EventKind::sample, ts, pid, tid, cpu, SamplePayload{std::move(stack), period_ns}};
}

TraceEvent make_switch_out(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu, WaitKind wait,
                           std::optional<std::vector<std::uint64_t>> stack) {
  return {EventKind::switch_out, ts, pid, tid, cpu, SchedSwitchPayload{wait, std::move(stack)}};
}

TraceEvent make_switch_in(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu) {
  return {EventKind::switch_in, ts, pid, tid, cpu, SchedSwitchPayload{}};
}

TraceEvent make_fork(TimestampNs ts, Pid parent_pid, Tid parent_tid, std::uint32_t cpu,
                     Pid child_pid, Tid child_tid) {
  return {EventKind::fork, ts,
          parent_pid,      parent_tid,
          cpu,             ForkPayload{parent_pid, parent_tid, child_pid, child_tid}};
}

TraceEvent make_exec(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu, std::string image) {
  return {EventKind::exec, ts, pid, tid, cpu, ExecPayload{std::move(image)}};
}

TraceEvent make_exit(TimestampNs ts, Pid pid, Tid tid, std::uint32_t cpu, std::int32_t exit_code) {
  return {EventKind::exit, ts, pid, tid, cpu, ExitPayload{exit_code}};
}

std::vector<TraceEvent> parse_event_stream(std::istream& in) {
  std::vector<TraceEvent> events;
  std::unordered_map<std::uint32_t, TimestampNs> last_ts_per_cpu;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (blank_line(line)) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(ParseError::Code::malformed_line, line_no, "",
                       "line " + std::to_string(line_no) + ": " + e.what());
    }
    TraceEvent ev = parse_record(obj, line_no);
    auto [it, inserted] = last_ts_per_cpu.try_emplace(ev.cpu, ev.ts);
    if (!inserted) {
      if (ev.ts < it->second) {
        throw ParseError(ParseError::Code::non_monotone_timestamp, line_no, "ts",
                         "line " + std::to_string(line_no) + ": ts " + std::to_string(ev.ts) +
                             " regresses below " + std::to_string(it->second) + " on cpu " +
                             std::to_string(ev.cpu));
      }
      it->second = ev.ts;
    }
    events.push_back(std::move(ev));
  }
  return events;
}

std::vector<TraceEvent> parse_event_stream(const std::string& text) {
  std::istringstream in(text);
  return parse_event_stream(in);
}

std::string serialize_event(const TraceEvent& ev) {
  ordered_json obj;
  switch (ev.kind) {
    case EventKind::sample:
      obj["kind"] = "sample";
      break;
    case EventKind::switch_out:
      obj["kind"] = "switch_out";
      break;
    case EventKind::switch_in:
      obj["kind"] = "switch_in";
      break;
    case EventKind::fork:
      obj["kind"] = "fork";
      break;
    case EventKind::exec:
      obj["kind"] = "exec";
      break;
    case EventKind::exit:
      obj["kind"] = "exit";
      break;
  }
  obj["ts"] = ev.ts;
  obj["pid"] = ev.pid;
  obj["tid"] = ev.tid;
  obj["cpu"] = ev.cpu;
  switch (ev.kind) {
    case EventKind::sample: {
      const auto& p = ev.sample();
      auto frames = ordered_json::array();
      for (std::uint64_t addr : p.stack) frames.push_back(hex_addr(addr));
      obj["stack"] = std::move(frames);
      obj["period"] = p.period_ns;
      break;
    }
    case EventKind::switch_out: {
      const auto& p = ev.sched();
      if (p.stack) {
        auto frames = ordered_json::array();
        for (std::uint64_t addr : *p.stack) frames.push_back(hex_addr(addr));
        obj["stack"] = std::move(frames);
      }
      if (p.wait != WaitKind::unknown) obj["wait"] = to_string(p.wait);
      break;
    }
    case EventKind::switch_in:
      break;
    case EventKind::fork: {
      const auto& p = ev.fork();
      obj["child_pid"] = p.child_pid;
      obj["child_tid"] = p.child_tid;
      break;
    }
    case EventKind::exec:
      obj["image"] = ev.exec().image;
      break;
    case EventKind::exit:
      obj["exit_code"] = ev.exit().exit_code;
      break;
  }
  return obj.dump();
}

std::string serialize_events(std::span<const TraceEvent> events) {
  std::string out;
  for (const TraceEvent& ev : events) {
    out += serialize_event(ev);
    out += '\n';
  }
  return out;
}

std::vector<TraceEvent> merge_streams(const std::vector<std::vector<TraceEvent>>& streams) {
  std::vector<TraceEvent> merged;
  std::size_t total = 0;
  for (const auto& s : streams) total += s.size();
  merged.reserve(total);
  for (const auto& s : streams) merged.insert(merged.end(), s.begin(), s.end());
  std::stable_sort(merged.begin(), merged.end(), [](const TraceEvent& a, const TraceEvent& b) {
    if (a.ts != b.ts) return a.ts < b.ts;
    return a.cpu < b.cpu;
  });
  return merged;
}

std::vector<std::vector<TraceEvent>> split_by_cpu(std::span<const TraceEvent> events) {
  std::map<std::uint32_t, std::vector<TraceEvent>> by_cpu;
  for (const TraceEvent& ev : events) by_cpu[ev.cpu].push_back(ev);
  std::vector<std::vector<TraceEvent>> streams;
  streams.reserve(by_cpu.size());
  for (auto& [cpu, stream] : by_cpu) streams.push_back(std::move(stream));
  return streams;
}

std::vector<TraceWarning> validate_trace(std::span<const TraceEvent> events) {
  std::vector<TraceWarning> warnings;

  struct TidState {
    bool switched_out = false;
    bool has_lifecycle = false;
    // Closed [spawn, exit) intervals plus an optional open spawn.
    std::vector<std::pair<TimestampNs, TimestampNs>> closed;
    std::optional<TimestampNs> open_spawn;
  };
  std::unordered_map<Tid, TidState> state;

  auto live_at = [](const TidState& st, TimestampNs ts) {
    for (const auto& [a, b] : st.closed) {
      if (ts >= a && ts < b) return true;
    }
    return st.open_spawn && ts >= *st.open_spawn;
  };

  for (const TraceEvent& ev : events) {
    switch (ev.kind) {
      case EventKind::switch_out:
        state[ev.tid].switched_out = true;
        break;
      case EventKind::switch_in: {
        TidState& st = state[ev.tid];
        if (!st.switched_out) {
          warnings.push_back({TraceWarning::Code::unmatched_switch_in, ev.tid, ev.ts,
                              "switch-in without prior switch-out for tid " +
                                  std::to_string(ev.tid)});
        }
        st.switched_out = false;
        break;
      }
      case EventKind::fork: {
        const Tid child = ev.fork().child_tid;
        TidState& st = state[child];
        if (st.open_spawn) {
          warnings.push_back({TraceWarning::Code::duplicate_live_fork, child, ev.ts,
                              "fork of already-live tid " + std::to_string(child)});
        } else {
          st.open_spawn = ev.ts;
        }
        st.has_lifecycle = true;
        break;
      }
      case EventKind::exit: {
        TidState& st = state[ev.tid];
        if (st.open_spawn) {
          st.closed.emplace_back(*st.open_spawn, ev.ts);
          st.open_spawn.reset();
        }
        st.has_lifecycle = true;
        break;
      }
      case EventKind::sample: {
        auto it = state.find(ev.tid);
        if (it != state.end() && it->second.has_lifecycle && !live_at(it->second, ev.ts)) {
          warnings.push_back({TraceWarning::Code::sample_outside_lifetime, ev.tid, ev.ts,
                              "sample for tid " + std::to_string(ev.tid) +
                                  " outside any known lifetime"});
        }
        break;
      }
      case EventKind::exec:
        break;
    }
  }
  return warnings;
}

std::string to_string(EventKind kind) {
  switch (kind) {
    case EventKind::sample: return "sample";
    case EventKind::switch_out: return "switch_out";
    case EventKind::switch_in: return "switch_in";
    case EventKind::fork: return "fork";
    case EventKind::exec: return "exec";
    case EventKind::exit: return "exit";
  }
  return "?";
}

std::string to_string(WaitKind wait) {
  switch (wait) {
    case WaitKind::runnable: return "runnable";
    case WaitKind::blocked: return "blocked";
    case WaitKind::unknown: return "unknown";
  }
  return "?";
}

}  // namespace tracehound
