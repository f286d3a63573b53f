#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tracehound/proctree.hpp"
#include "tracehound/profiles.hpp"
#include "tracehound/trace_model.hpp"

namespace tracehound {

struct ReplayOptions {
  std::string events_path;
  std::optional<std::string> symbols_path;
  std::optional<TaskKey> scope;
  std::string out_dir;
  // Weigh on-CPU folded stacks by sample count instead of period ns.
  bool count_mode = false;
};

struct ReplaySummary {
  std::size_t event_count = 0;
  std::vector<TraceWarning> warnings;
  std::vector<std::string> artifacts;
};

// Full replay pipeline: parse -> per-cpu split -> merge -> tree + profiles,
// then writes oncpu.folded, offcpu.folded, tree.json and accounting.json to
// out_dir. Artifact bytes are deterministic for a given input.
ReplaySummary run_replay(const ReplayOptions& options);

// In-memory variant operating on an already-merged stream.
struct ReplayArtifacts {
  std::string oncpu_folded;
  std::string offcpu_folded;
  std::string tree_json;
  std::string accounting_json;
  std::vector<TraceWarning> warnings;
};
ReplayArtifacts build_replay_artifacts(std::span<const TraceEvent> merged, const SymbolMap& map,
                                       const std::optional<TaskKey>& scope, bool count_mode);

}  // namespace tracehound
