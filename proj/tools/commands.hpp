#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "mst/config.hpp"

namespace mst::cli {

struct CommandSpec {
  std::string name;
  std::string summary;
  /// Section whose keys also get short flags (--alpha for plan.alpha).
  std::string primary;
  /// Every section a config file for this command may contain.
  std::vector<std::string> sections;
  KeyValueConfig defaults;
};

const std::vector<CommandSpec>& command_specs();
const CommandSpec& command_spec(const std::string& name);

/// Reads `merged` through the command's config types (unknown keys and bad
/// values are ConfigErrors) and returns the complete configuration with
/// every default spelled out and relative paths made absolute.
KeyValueConfig resolve_config(const std::string& name, const KeyValueConfig& merged);

struct CommandResult {
  std::vector<std::pair<std::string, double>> metrics;
  std::vector<std::string> outputs;
  /// False when the command ran but found a failure to report (gradcheck
  /// mismatch, diverged training cell).
  bool ok = true;
};

/// Runs a command on a resolved config. Tables go to `out`; files go under
/// `out_dir`, which must exist.
CommandResult run_command(const std::string& name, const KeyValueConfig& config, const std::string& out_dir,
                          std::ostream& out);

}  // namespace mst::cli
