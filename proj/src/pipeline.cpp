#include "tracehound/pipeline.hpp"

#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace tracehound {

namespace {

nlohmann::ordered_json accounting_entry(const ProcessTree& tree, const TaskKey& key,
                                        const Profile& on, const Profile& off) {
  const WalltimeAccounting acct = walltime_accounting(on, off, tree, key);
  nlohmann::ordered_json obj;
  obj["scope"] = key.str();
  obj["on_ns"] = acct.on_ns;
  obj["off_ns"] = acct.off_ns;
  obj["lifetime_ns"] = acct.lifetime_ns;
  obj["unattributed_ns"] = acct.unattributed_ns;
  obj["lifetime_truncated"] = acct.lifetime_truncated;
  obj["negative_overrun"] = acct.negative_overrun;
  return obj;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RunError("cannot write '" + path.string() + "'");
  out << bytes;
}

}  // namespace

ReplayArtifacts build_replay_artifacts(std::span<const TraceEvent> merged, const SymbolMap& map,
                                       const std::optional<TaskKey>& scope, bool count_mode) {
  ReplayArtifacts artifacts;
  const ProcessTree tree = build_process_tree(merged);
  artifacts.warnings = validate_trace(merged);

  const ProcessTree* tree_ptr = scope ? &tree : nullptr;
  if (scope && !tree.find(*scope)) {
    throw TreeError(TreeError::Code::unknown_node, scope->tid,
                    "scope " + scope->str() + " not present in trace");
  }

  const Profile on = aggregate_samples(merged, map, tree_ptr, scope);
  const PairingResult pairing = pair_context_switches(merged);
  const Profile off = build_offcpu_profile(pairing, map, tree_ptr, scope);

  if (count_mode) {
    artifacts.oncpu_folded = to_folded(aggregate_samples(merged, map, tree_ptr, scope, true));
  } else {
    artifacts.oncpu_folded = to_folded(on);
  }
  artifacts.offcpu_folded = to_folded(off);
  artifacts.tree_json = tree.to_json();

  nlohmann::ordered_json acct;
  if (scope) {
    acct = accounting_entry(tree, *scope, on, off);
  } else {
    auto roots = nlohmann::ordered_json::array();
    for (const TaskKey& root : tree.roots()) {
      const Profile on_scoped = aggregate_samples(merged, map, &tree, root);
      const Profile off_scoped = build_offcpu_profile(pairing, map, &tree, root);
      roots.push_back(accounting_entry(tree, root, on_scoped, off_scoped));
    }
    acct["roots"] = std::move(roots);
  }
  artifacts.accounting_json = acct.dump(2) + "\n";
  return artifacts;
}

ReplaySummary run_replay(const ReplayOptions& options) {
  std::ifstream events_in(options.events_path, std::ios::binary);
  if (!events_in) throw InputError("cannot open events file '" + options.events_path + "'");
  const std::vector<TraceEvent> file_order = parse_event_stream(events_in);
  const std::vector<TraceEvent> merged = merge_streams(split_by_cpu(file_order));

  SymbolMap map;
  if (options.symbols_path) {
    std::ifstream symbols_in(*options.symbols_path, std::ios::binary);
    if (!symbols_in) {
      throw InputError("cannot open symbol map '" + *options.symbols_path + "'");
    }
    map = SymbolMap::parse(symbols_in);
  }

  ReplayArtifacts artifacts =
      build_replay_artifacts(merged, map, options.scope, options.count_mode);

  std::filesystem::create_directories(options.out_dir);
  const std::filesystem::path out(options.out_dir);
  write_file(out / "oncpu.folded", artifacts.oncpu_folded);
  write_file(out / "offcpu.folded", artifacts.offcpu_folded);
  write_file(out / "tree.json", artifacts.tree_json);
  write_file(out / "accounting.json", artifacts.accounting_json);

  ReplaySummary summary;
  summary.event_count = merged.size();
  summary.warnings = std::move(artifacts.warnings);
  summary.artifacts = {
      (out / "oncpu.folded").string(),
      (out / "offcpu.folded").string(),
      (out / "tree.json").string(),
      (out / "accounting.json").string(),
  };
  return summary;
}

}  // namespace tracehound
