#include "mst/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "mst/error.hpp"

#ifndef MST_VERSION
#define MST_VERSION "unknown"
#endif

namespace mst {

std::string library_version() { return MST_VERSION; }

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void RunManifest::start() { started = utc_timestamp(); }
void RunManifest::finish() { finished = utc_timestamp(); }

std::string RunManifest::to_json() const {
  nlohmann::ordered_json j;
  j["command"] = command;
  j["argv"] = argv;
  j["version"] = version;
  j["started"] = started;
  j["finished"] = finished;
  nlohmann::ordered_json cfg = nlohmann::ordered_json::object();
  for (const auto& key : config.keys()) cfg[key] = *config.get(key);
  j["config"] = cfg;
  j["outputs"] = outputs;
  nlohmann::ordered_json m = nlohmann::ordered_json::object();
  for (const auto& [name, value] : metrics) m[name] = value;
  j["metrics"] = m;
  return j.dump(2) + "\n";
}

RunManifest RunManifest::from_json(const std::string& text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run manifest: ") + e.what());
  }
  RunManifest r;
  try {
    r.command = j.at("command").get<std::string>();
    r.argv = j.at("argv").get<std::vector<std::string>>();
    r.version = j.at("version").get<std::string>();
    r.started = j.at("started").get<std::string>();
    r.finished = j.at("finished").get<std::string>();
    for (const auto& [key, value] : j.at("config").items()) r.config.set(key, value.get<std::string>());
    r.outputs = j.at("outputs").get<std::vector<std::string>>();
    for (const auto& [name, value] : j.at("metrics").items()) r.metrics.emplace_back(name, value.get<double>());
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("run manifest: ") + e.what());
  }
  return r;
}

void RunManifest::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << to_json();
}

RunManifest RunManifest::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace mst
