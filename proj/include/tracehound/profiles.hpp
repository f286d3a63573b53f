#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tracehound/proctree.hpp"
#include "tracehound/trace_model.hpp"

namespace tracehound {

struct SymbolEntry {
  std::uint64_t start = 0;
  std::uint64_t size = 0;
  std::string name;

  bool operator==(const SymbolEntry&) const = default;
};

// Address-range -> name table, sorted by start, ranges non-overlapping.
class SymbolMap {
 public:
  SymbolMap() = default;
  explicit SymbolMap(std::vector<SymbolEntry> entries);

  // Text format: "HEXSTART HEXSIZE NAME", whitespace separated, one entry per
  // line (the name runs to end of line). Blank lines are skipped. Throws
  // ParseError: malformed_line, overlapping_range.
  static SymbolMap parse(std::istream& in);
  static SymbolMap parse(const std::string& text);

  // Total: unmapped addresses come back as "[unknown:0xADDR]".
  std::string symbolize(std::uint64_t addr) const;

  const std::vector<SymbolEntry>& entries() const { return entries_; }

 private:
  std::vector<SymbolEntry> entries_;
};

struct OffCpuInterval {
  Tid tid = 0;
  TimestampNs start_ts = 0;
  TimestampNs end_ts = 0;  // exclusive; always > start_ts
  std::optional<std::vector<std::uint64_t>> stack;
  WaitKind wait = WaitKind::unknown;
  bool truncated = false;

  TimestampNs duration() const { return end_ts - start_ts; }
  bool operator==(const OffCpuInterval&) const = default;
};

struct PairingResult {
  std::vector<OffCpuInterval> intervals;
  std::uint64_t unmatched_switch_in = 0;
  std::uint64_t double_switch_out = 0;
  std::uint64_t zero_length_dropped = 0;
};

// Pairs SchedSwitchOut/SchedSwitchIn per tid over a time-ordered stream.
// Rules: an out opens an interval closed by the next in of the same tid; an
// out while an interval is already open is ignored (counted); an in without
// an open interval is dropped (counted); zero-length intervals are dropped
// (counted); intervals still open at the last event ts are emitted truncated.
PairingResult pair_context_switches(std::span<const TraceEvent> events);

struct Profile {
  enum class Kind { on_cpu, off_cpu };

  Kind kind = Kind::on_cpu;
  // Symbolized stacks, root first -> total weight in ns.
  std::map<std::vector<std::string>, std::uint64_t> entries;
  std::map<std::string, std::uint64_t> warnings;
  std::optional<TaskKey> scope;

  std::uint64_t total_weight() const;
  bool operator==(const Profile& other) const {
    return kind == other.kind && entries == other.entries;
  }
};

// Accumulates sample periods per symbolized root-first stack. When `scope` is
// given, only samples of tids inside the scope subtree and live at the sample
// ts are counted; skipped samples increment warnings["samples_out_of_scope"].
// When `count_mode` is set each sample weighs 1 instead of its period.
Profile aggregate_samples(std::span<const TraceEvent> events, const SymbolMap& map,
                          const ProcessTree* tree = nullptr,
                          std::optional<TaskKey> scope = std::nullopt, bool count_mode = false);

// Sums interval durations per symbolized stack; stackless intervals aggregate
// under the single frame "[no stack]". Scope filtering keys off the interval
// start ts. Pairing counters carry over into the profile warnings.
Profile build_offcpu_profile(const PairingResult& pairing, const SymbolMap& map,
                             const ProcessTree* tree = nullptr,
                             std::optional<TaskKey> scope = std::nullopt);

// Folded stack text: "frameA;frameB WEIGHT\n" per entry, sorted
// lexicographically by the joined stack. Bit-exact; empty profile -> "".
std::string to_folded(const Profile& profile);

// Inverse of to_folded; repeated stacks accumulate. Throws ParseError.
Profile parse_folded(std::istream& in, Profile::Kind kind);
Profile parse_folded(const std::string& text, Profile::Kind kind);

// {kind, entries:[{stack, weight_ns}], warnings} with entries in folded order.
std::string profile_to_json(const Profile& profile, int indent = 2);

struct WalltimeAccounting {
  std::uint64_t on_ns = 0;
  std::uint64_t off_ns = 0;
  std::uint64_t lifetime_ns = 0;
  std::uint64_t unattributed_ns = 0;
  bool lifetime_truncated = false;
  // Set when on+off exceeds lifetime by more than 1% of lifetime; smaller
  // overshoot is sampling quantization and stays silent.
  bool negative_overrun = false;
};

// unattributed = lifetime - on - off, clamped at 0. Profiles must already be
// scoped to `key`. Throws unknown_node.
WalltimeAccounting walltime_accounting(const Profile& on, const Profile& off,
                                       const ProcessTree& tree, const TaskKey& key);

}  // namespace tracehound
