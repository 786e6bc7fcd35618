// mst: command-line front end. Every subcommand reads a sectioned config
// (defaults, then --config FILE, then flags), writes the resolved config
// and a run manifest into --out, and can be repeated with `mst replay`.

#include <CLI11.hpp>

#include <bit>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "commands.hpp"
#include "mst/error.hpp"
#include "mst/manifest.hpp"

namespace fs = std::filesystem;
using namespace mst;

namespace {

std::string dashed(std::string s) {
  for (char& c : s)
    if (c == '_') c = '-';
  return s;
}

struct Invocation {
  std::string command;
  std::string config_file;
  std::string out_dir;
  std::map<std::string, CLI::Option*> flags;
  std::map<std::string, std::string> values;
};

void add_command(CLI::App& app, const cli::CommandSpec& spec, Invocation& inv, std::string& chosen) {
  CLI::App* sub = app.add_subcommand(spec.name, spec.summary);
  sub->add_option("--config", inv.config_file, "Config file ([section] key = value)");
  sub->add_option("--out", inv.out_dir, "Output directory (default runs/" + spec.name + ")");
  std::set<std::string> short_names;
  for (const auto& key : spec.defaults.keys()) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string leaf = dashed(key.substr(dot + 1));
    std::string names = "--" + key;
    // Short spellings for the command's own section and the common
    // training knobs; --train.X etc. always work.
    const bool wants_short = section == spec.primary ||
                             (section == "train" && (leaf == "lr" || leaf == "epochs" || leaf == "batch-size" ||
                                                     leaf == "threads" || leaf == "seed"));
    if (wants_short && short_names.insert(leaf).second && leaf != "config" && leaf != "out") names += ",--" + leaf;
    if (dashed(key) != key) names += ",--" + dashed(key);
    inv.flags[key] = sub->add_option(names, inv.values[key], "default: " + spec.defaults.get(key).value_or(""));
  }
  sub->callback([&chosen, name = spec.name] { chosen = name; });
}

KeyValueConfig flag_config(const Invocation& inv) {
  KeyValueConfig out;
  for (const auto& [key, opt] : inv.flags) {
    if (opt->count() > 0) out.set(key, inv.values.at(key));
  }
  return out;
}

KeyValueConfig load_config_file(const std::string& path) {
  try {
    return KeyValueConfig::load(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
}

/// Runs a resolved command into `out_dir` and writes its manifest.
RunManifest execute(const std::string& command, const KeyValueConfig& resolved, const std::string& out_dir,
                    const std::vector<std::string>& argv, bool& ok) {
  fs::create_directories(out_dir);
  RunManifest manifest;
  manifest.command = command;
  manifest.argv = argv;
  manifest.config = resolved;
  manifest.start();
  const std::string resolved_path = (fs::path(out_dir) / "resolved.ini").string();
  resolved.save(resolved_path);
  const cli::CommandResult result = cli::run_command(command, resolved, out_dir, std::cout);
  manifest.finish();
  manifest.outputs.push_back(resolved_path);
  manifest.outputs.insert(manifest.outputs.end(), result.outputs.begin(), result.outputs.end());
  const std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  manifest.outputs.push_back(manifest_path);
  manifest.metrics = result.metrics;
  manifest.save(manifest_path);
  std::cerr << "wrote " << manifest_path << "\n";
  ok = result.ok;
  return manifest;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return {};
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

int replay(const std::string& manifest_path, std::string out_dir, const std::vector<std::string>& argv) {
  const RunManifest original = RunManifest::load(manifest_path);
  const fs::path original_dir = fs::path(manifest_path).parent_path();
  if (out_dir.empty()) out_dir = (original_dir / "replay").string();
  if (fs::weakly_canonical(out_dir) == fs::weakly_canonical(original_dir.empty() ? "." : original_dir)) {
    throw ConfigError("replay output directory must differ from the original run");
  }
  const KeyValueConfig resolved = cli::resolve_config(original.command, original.config);
  bool ok = true;
  const RunManifest again = execute(original.command, resolved, out_dir, argv, ok);

  std::size_t mismatches = 0;
  std::map<std::string, double> fresh(again.metrics.begin(), again.metrics.end());
  for (const auto& [name, value] : original.metrics) {
    const auto it = fresh.find(name);
    if (it == fresh.end()) {
      std::cout << "missing metric " << name << "\n";
      ++mismatches;
    } else if (std::bit_cast<std::uint64_t>(it->second) != std::bit_cast<std::uint64_t>(value)) {
      std::cout << "metric " << name << ": " << value << " then " << it->second << "\n";
      ++mismatches;
    }
  }
  if (again.metrics.size() != original.metrics.size()) {
    std::cout << "metric count " << original.metrics.size() << " then " << again.metrics.size() << "\n";
    ++mismatches;
  }
  const std::string old_log = slurp((original_dir / "metrics.jsonl").string());
  const std::string new_log = slurp((fs::path(out_dir) / "metrics.jsonl").string());
  if (!old_log.empty() && old_log != new_log) {
    std::cout << "metrics.jsonl differs\n";
    ++mismatches;
  }
  if (mismatches) {
    std::cout << "replay: " << mismatches << " difference(s)\n";
    return 2;
  }
  std::cout << "replay: " << original.metrics.size() << " metrics identical\n";
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Multi-scale Transformer toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", library_version());

  std::string chosen;
  std::map<std::string, Invocation> invocations;
  for (const auto& spec : cli::command_specs()) add_command(app, spec, invocations[spec.name], chosen);

  std::string manifest_path;
  std::string replay_out;
  CLI::App* rep = app.add_subcommand("replay", "Re-run a manifest and compare its metrics bit for bit");
  rep->add_option("manifest", manifest_path, "manifest.json of an earlier run")->required();
  rep->add_option("--out", replay_out, "Output directory (default <run>/replay)");
  rep->callback([&chosen] { chosen = "replay"; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (chosen == "replay") return replay(manifest_path, replay_out, args);
    Invocation& cur = invocations.at(chosen);
    const cli::CommandSpec& spec = cli::command_spec(chosen);
    KeyValueConfig merged = spec.defaults;
    if (!cur.config_file.empty()) merged.merge(load_config_file(cur.config_file));
    merged.merge(flag_config(cur));
    const KeyValueConfig resolved = cli::resolve_config(chosen, merged);
    const std::string out_dir = cur.out_dir.empty() ? "runs/" + chosen : cur.out_dir;
    bool ok = true;
    execute(chosen, resolved, out_dir, args, ok);
    return ok ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
