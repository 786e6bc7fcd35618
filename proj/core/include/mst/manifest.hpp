#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mst/config.hpp"

namespace mst {

std::string library_version();

/// Record of one CLI run, written as JSON next to its outputs. `config` is
/// the fully resolved configuration (file values with flags applied), so
/// feeding it back through `--config` repeats the run.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  KeyValueConfig config;
  std::string version = library_version();
  std::string started;   // UTC, ISO 8601
  std::string finished;
  std::vector<std::string> outputs;
  std::vector<std::pair<std::string, double>> metrics;

  void start();
  void finish();
  void add_metric(const std::string& name, double value) { metrics.emplace_back(name, value); }

  std::string to_json() const;
  static RunManifest from_json(const std::string& text);
  void save(const std::string& path) const;
  static RunManifest load(const std::string& path);
};

std::string utc_timestamp();

}  // namespace mst
