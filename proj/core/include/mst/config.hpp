#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace mst {

/// Flat sectioned key/value text:
///
///   # comment
///   [section]
///   key = value
///
/// Keys are addressed as "section.key". Duplicate keys and lines that are
/// neither comments, section headers nor assignments are ConfigErrors.
/// Insertion order is preserved so rendering is deterministic.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::string_view text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, std::string value);
  bool contains(const std::string& key) const;
  std::optional<std::string> get(const std::string& key) const;
  std::vector<std::string> keys() const;
  std::vector<std::string> keys_in(const std::string& section) const;
  /// Copies every entry of `other` over this one.
  void merge(const KeyValueConfig& other);

  std::string render() const;
  void save(const std::string& path) const;

  /// Throws ConfigError naming the first key of `section` not in `allowed`.
  void require_known(const std::string& section, const std::set<std::string>& allowed) const;

  // Typed getters; throw ConfigError on malformed values.
  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::size_t get_size(const std::string& key, std::size_t fallback) const;
  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
  std::string origin_ = "<string>";
};

double parse_double(std::string_view text, std::string_view what);
std::size_t parse_size(std::string_view text, std::string_view what);
bool parse_bool(std::string_view text, std::string_view what);
std::vector<std::string> split_list(std::string_view csv);
/// Round-trippable decimal rendering of a double.
std::string format_double(double v);

}  // namespace mst
