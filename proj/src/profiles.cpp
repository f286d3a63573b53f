#include "tracehound/profiles.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <istream>
#include <sstream>
#include <unordered_map>

#include "json.hpp"

namespace tracehound {

namespace {

constexpr const char* kNoStackFrame = "[no stack]";

std::string unknown_frame(std::uint64_t addr) {
  char buf[sizeof("[unknown:0x]") + 16];
  std::snprintf(buf, sizeof(buf), "[unknown:0x%llx]", static_cast<unsigned long long>(addr));
  return buf;
}

// leaf-first on the wire -> root-first symbolized
std::vector<std::string> symbolize_stack(const std::vector<std::uint64_t>& stack,
                                         const SymbolMap& map) {
  std::vector<std::string> frames;
  frames.reserve(stack.size());
  for (auto it = stack.rbegin(); it != stack.rend(); ++it) {
    frames.push_back(map.symbolize(*it));
  }
  return frames;
}

std::string join_stack(const std::vector<std::string>& frames) {
  std::string out;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (i) out += ';';
    out += frames[i];
  }
  return out;
}

std::vector<std::pair<std::string, std::uint64_t>> folded_order(const Profile& profile) {
  std::vector<std::pair<std::string, std::uint64_t>> lines;
  lines.reserve(profile.entries.size());
  for (const auto& [stack, weight] : profile.entries) {
    lines.emplace_back(join_stack(stack), weight);
  }
  std::sort(lines.begin(), lines.end());
  return lines;
}

}  // namespace

SymbolMap::SymbolMap(std::vector<SymbolEntry> entries) : entries_(std::move(entries)) {
  std::sort(entries_.begin(), entries_.end(),
            [](const SymbolEntry& a, const SymbolEntry& b) { return a.start < b.start; });
}

SymbolMap SymbolMap::parse(std::istream& in) {
  std::vector<SymbolEntry> entries;
  std::vector<std::size_t> lines;  // source line per entry, for error reports
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream fields(line);
    std::string start_text, size_text;
    if (!(fields >> start_text >> size_text)) {
      throw ParseError(ParseError::Code::malformed_line, line_no, "",
                       "symbol map line " + std::to_string(line_no) +
                           ": expected HEXSTART HEXSIZE NAME");
    }
    std::string name;
    std::getline(fields, name);
    const std::size_t first = name.find_first_not_of(" \t");
    name = first == std::string::npos ? std::string{} : name.substr(first);
    while (!name.empty() && (name.back() == '\r' || name.back() == ' ' || name.back() == '\t')) {
      name.pop_back();
    }
    auto parse_hex = [&](const std::string& text, const char* what) {
      std::size_t skip = text.size() > 2 && text[0] == '0' && (text[1] == 'x' || text[1] == 'X')
                             ? 2
                             : 0;
      std::uint64_t out = 0;
      auto [ptr, ec] = std::from_chars(text.data() + skip, text.data() + text.size(), out, 16);
      if (ec != std::errc{} || ptr != text.data() + text.size() || text.size() == skip) {
        throw ParseError(ParseError::Code::malformed_line, line_no, what,
                         "symbol map line " + std::to_string(line_no) + ": bad hex " +
                             std::string(what) + " '" + text + "'");
      }
      return out;
    };
    SymbolEntry entry;
    entry.start = parse_hex(start_text, "start");
    entry.size = parse_hex(size_text, "size");
    if (entry.size == 0 || name.empty() || entry.start > UINT64_MAX - entry.size) {
      throw ParseError(ParseError::Code::malformed_line, line_no, "",
                       "symbol map line " + std::to_string(line_no) +
                           ": size must be > 0, name non-empty, range in bounds");
    }
    entry.name = std::move(name);
    entries.push_back(std::move(entry));
    lines.push_back(line_no);
  }

  std::vector<std::size_t> order(entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return entries[a].start < entries[b].start; });
  std::vector<SymbolEntry> sorted;
  sorted.reserve(entries.size());
  for (std::size_t i : order) sorted.push_back(entries[i]);
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const SymbolEntry& prev = sorted[i - 1];
    const SymbolEntry& cur = sorted[i];
    if (prev.start + prev.size > cur.start) {
      char msg[128];
      std::snprintf(msg, sizeof(msg), "overlapping symbol ranges at 0x%llx and 0x%llx",
                    static_cast<unsigned long long>(prev.start),
                    static_cast<unsigned long long>(cur.start));
      ParseError err(ParseError::Code::overlapping_range, lines[order[i]], "", msg);
      err.range_a = prev.start;
      err.range_b = cur.start;
      throw err;
    }
  }
  SymbolMap map;
  map.entries_ = std::move(sorted);
  return map;
}

SymbolMap SymbolMap::parse(const std::string& text) {
  std::istringstream in(text);
  return parse(in);
}

std::string SymbolMap::symbolize(std::uint64_t addr) const {
  auto it = std::upper_bound(entries_.begin(), entries_.end(), addr,
                             [](std::uint64_t a, const SymbolEntry& e) { return a < e.start; });
  if (it != entries_.begin()) {
    const SymbolEntry& e = *std::prev(it);
    if (addr < e.start + e.size) return e.name;
  }
  return unknown_frame(addr);
}

PairingResult pair_context_switches(std::span<const TraceEvent> events) {
  PairingResult result;
  struct Open {
    TimestampNs start = 0;
    std::optional<std::vector<std::uint64_t>> stack;
    WaitKind wait = WaitKind::unknown;
  };
  std::unordered_map<Tid, Open> open;
  TimestampNs last_ts = 0;

  for (const TraceEvent& ev : events) {
    last_ts = std::max(last_ts, ev.ts);
    if (ev.kind == EventKind::switch_out) {
      auto [it, inserted] = open.try_emplace(ev.tid);
      if (!inserted) {
        ++result.double_switch_out;
        continue;
      }
      it->second = {ev.ts, ev.sched().stack, ev.sched().wait};
    } else if (ev.kind == EventKind::switch_in) {
      auto it = open.find(ev.tid);
      if (it == open.end()) {
        ++result.unmatched_switch_in;
        continue;
      }
      if (ev.ts > it->second.start) {
        result.intervals.push_back({ev.tid, it->second.start, ev.ts, std::move(it->second.stack),
                                    it->second.wait, false});
      } else {
        ++result.zero_length_dropped;
      }
      open.erase(it);
    }
  }

  // Unclosed intervals truncate at the last event ts.
  std::vector<std::pair<Tid, Open>> rest(open.begin(), open.end());
  std::sort(rest.begin(), rest.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (auto& [tid, o] : rest) {
    if (last_ts > o.start) {
      result.intervals.push_back({tid, o.start, last_ts, std::move(o.stack), o.wait, true});
    } else {
      ++result.zero_length_dropped;
    }
  }
  return result;
}

std::uint64_t Profile::total_weight() const {
  std::uint64_t sum = 0;
  for (const auto& [stack, weight] : entries) sum += weight;
  return sum;
}

Profile aggregate_samples(std::span<const TraceEvent> events, const SymbolMap& map,
                          const ProcessTree* tree, std::optional<TaskKey> scope,
                          bool count_mode) {
  Profile profile;
  profile.kind = Profile::Kind::on_cpu;
  profile.scope = scope;
  std::uint64_t skipped = 0;
  for (const TraceEvent& ev : events) {
    if (ev.kind != EventKind::sample) continue;
    if (scope && tree && !tree->in_scope(*scope, ev.tid, ev.ts)) {
      ++skipped;
      continue;
    }
    const SamplePayload& p = ev.sample();
    profile.entries[symbolize_stack(p.stack, map)] += count_mode ? 1 : p.period_ns;
  }
  if (skipped) profile.warnings["samples_out_of_scope"] = skipped;
  return profile;
}

Profile build_offcpu_profile(const PairingResult& pairing, const SymbolMap& map,
                             const ProcessTree* tree, std::optional<TaskKey> scope) {
  Profile profile;
  profile.kind = Profile::Kind::off_cpu;
  profile.scope = scope;
  std::uint64_t skipped = 0;
  for (const OffCpuInterval& iv : pairing.intervals) {
    if (scope && tree && !tree->in_scope(*scope, iv.tid, iv.start_ts)) {
      ++skipped;
      continue;
    }
    std::vector<std::string> frames =
        iv.stack ? symbolize_stack(*iv.stack, map) : std::vector<std::string>{kNoStackFrame};
    profile.entries[std::move(frames)] += iv.duration();
  }
  if (skipped) profile.warnings["intervals_out_of_scope"] = skipped;
  if (pairing.unmatched_switch_in) {
    profile.warnings["unmatched_switch_in"] = pairing.unmatched_switch_in;
  }
  if (pairing.double_switch_out) {
    profile.warnings["double_switch_out"] = pairing.double_switch_out;
  }
  if (pairing.zero_length_dropped) {
    profile.warnings["zero_length_dropped"] = pairing.zero_length_dropped;
  }
  return profile;
}

std::string to_folded(const Profile& profile) {
  std::string out;
  for (const auto& [stack_text, weight] : folded_order(profile)) {
    out += stack_text;
    out += ' ';
    out += std::to_string(weight);
    out += '\n';
  }
  return out;
}

Profile parse_folded(std::istream& in, Profile::Kind kind) {
  Profile profile;
  profile.kind = kind;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::size_t space = line.rfind(' ');
    if (space == std::string::npos || space == 0 || space + 1 == line.size()) {
      throw ParseError(ParseError::Code::malformed_line, line_no, "",
                       "folded line " + std::to_string(line_no) + ": expected 'STACK WEIGHT'");
    }
    std::uint64_t weight = 0;
    auto [ptr, ec] = std::from_chars(line.data() + space + 1, line.data() + line.size(), weight);
    if (ec != std::errc{} || ptr != line.data() + line.size()) {
      throw ParseError(ParseError::Code::malformed_line, line_no, "weight",
                       "folded line " + std::to_string(line_no) + ": bad weight");
    }
    std::vector<std::string> frames;
    std::size_t begin = 0;
    while (begin <= space) {
      std::size_t end = line.find(';', begin);
      if (end == std::string::npos || end > space) end = space;
      if (end == begin) {
        throw ParseError(ParseError::Code::malformed_line, line_no, "stack",
                         "folded line " + std::to_string(line_no) + ": empty frame");
      }
      frames.push_back(line.substr(begin, end - begin));
      begin = end + 1;
    }
    profile.entries[std::move(frames)] += weight;
  }
  return profile;
}

Profile parse_folded(const std::string& text, Profile::Kind kind) {
  std::istringstream in(text);
  return parse_folded(in, kind);
}

std::string profile_to_json(const Profile& profile, int indent) {
  nlohmann::ordered_json doc;
  doc["kind"] = profile.kind == Profile::Kind::on_cpu ? "on_cpu" : "off_cpu";
  auto entries = nlohmann::ordered_json::array();
  std::vector<std::pair<std::string, const std::vector<std::string>*>> order;
  order.reserve(profile.entries.size());
  for (const auto& [stack, weight] : profile.entries) {
    order.emplace_back(join_stack(stack), &stack);
  }
  std::sort(order.begin(), order.end());
  for (const auto& [joined, stack] : order) {
    nlohmann::ordered_json entry;
    entry["stack"] = *stack;
    entry["weight_ns"] = profile.entries.at(*stack);
    entries.push_back(std::move(entry));
  }
  doc["entries"] = std::move(entries);
  doc["warnings"] = nlohmann::ordered_json::object();
  for (const auto& [key, value] : profile.warnings) doc["warnings"][key] = value;
  return doc.dump(indent) + "\n";
}

WalltimeAccounting walltime_accounting(const Profile& on, const Profile& off,
                                       const ProcessTree& tree, const TaskKey& key) {
  const Lifetime lifetime = tree.lifetime_of(key);
  WalltimeAccounting acct;
  acct.on_ns = on.total_weight();
  acct.off_ns = off.total_weight();
  acct.lifetime_ns = lifetime.duration();
  acct.lifetime_truncated = lifetime.truncated;
  const std::uint64_t attributed = acct.on_ns + acct.off_ns;
  if (attributed <= acct.lifetime_ns) {
    acct.unattributed_ns = acct.lifetime_ns - attributed;
  } else {
    acct.unattributed_ns = 0;
    const std::uint64_t overrun = attributed - acct.lifetime_ns;
    acct.negative_overrun = overrun * 100 > acct.lifetime_ns;
  }
  return acct;
}

}  // namespace tracehound
