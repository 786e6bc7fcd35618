#include "mst/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mst/error.hpp"

namespace mst {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_name(std::string_view s) {
  return !s.empty() && std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-' || c == '.' || c == '/';
  });
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(std::string_view text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::string section;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    const std::string where = origin + ":" + std::to_string(line_no);
    if (line.empty() || line.front() == '#' || line.front() == ';') continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + ": unterminated section header");
      const auto name = trim(line.substr(1, line.size() - 2));
      if (!valid_name(name)) throw ConfigError(where + ": bad section name");
      section = std::string(name);
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const auto key = trim(line.substr(0, eq));
    if (!valid_name(key)) throw ConfigError(where + ": bad key '" + std::string(key) + "'");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    if (cfg.contains(full)) throw ConfigError(where + ": duplicate key '" + full + "'");
    cfg.entries_.emplace_back(full, std::string(trim(line.substr(eq + 1))));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

void KeyValueConfig::set(const std::string& key, std::string value) {
  for (auto& [k, v] : entries_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  entries_.emplace_back(key, std::move(value));
}

bool KeyValueConfig::contains(const std::string& key) const { return get(key).has_value(); }

std::optional<std::string> KeyValueConfig::get(const std::string& key) const {
  for (const auto& [k, v] : entries_)
    if (k == key) return v;
  return std::nullopt;
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) out.push_back(e.first);
  return out;
}

std::vector<std::string> KeyValueConfig::keys_in(const std::string& section) const {
  std::vector<std::string> out;
  const std::string prefix = section + ".";
  for (const auto& e : entries_)
    if (e.first.starts_with(prefix)) out.push_back(e.first.substr(prefix.size()));
  return out;
}

void KeyValueConfig::merge(const KeyValueConfig& other) {
  for (const auto& [k, v] : other.entries_) set(k, v);
}

std::string KeyValueConfig::render() const {
  // Group by section, sections in first-appearance order. Unsectioned keys
  // go first; after a header they would be read back into that section.
  std::vector<std::string> sections{""};
  for (const auto& e : entries_) {
    const auto dot = e.first.find('.');
    std::string s = dot == std::string::npos ? "" : e.first.substr(0, dot);
    if (std::find(sections.begin(), sections.end(), s) == sections.end()) sections.push_back(s);
  }
  std::ostringstream os;
  for (const auto& s : sections) {
    if (!s.empty()) os << "[" << s << "]\n";
    for (const auto& [k, v] : entries_) {
      const auto dot = k.find('.');
      const std::string ks = dot == std::string::npos ? "" : k.substr(0, dot);
      if (ks != s) continue;
      os << (dot == std::string::npos ? k : k.substr(dot + 1)) << " = " << v << "\n";
    }
    os << "\n";
  }
  return os.str();
}

void KeyValueConfig::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << render();
}

void KeyValueConfig::require_known(const std::string& section, const std::set<std::string>& allowed) const {
  for (const auto& k : keys_in(section)) {
    if (!allowed.contains(k)) throw ConfigError(origin_ + ": unknown key '" + section + "." + k + "'");
  }
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  return get(key).value_or(fallback);
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  auto v = get(key);
  return v ? parse_double(*v, key) : fallback;
}

std::size_t KeyValueConfig::get_size(const std::string& key, std::size_t fallback) const {
  auto v = get(key);
  return v ? parse_size(*v, key) : fallback;
}

std::uint64_t KeyValueConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
  auto v = get(key);
  if (!v) return fallback;
  std::uint64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (v->empty() || ec != std::errc() || ptr != v->data() + v->size()) {
    throw ConfigError(key + ": expected an unsigned integer, got '" + *v + "'");
  }
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  auto v = get(key);
  return v ? parse_bool(*v, key) : fallback;
}

double parse_double(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  double out = 0.0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size() || !std::isfinite(out)) {
    throw ConfigError(std::string(what) + ": expected a finite number, got '" + std::string(text) + "'");
  }
  return out;
}

std::size_t parse_size(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  std::size_t out = 0;
  auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), out);
  if (t.empty() || ec != std::errc() || ptr != t.data() + t.size()) {
    throw ConfigError(std::string(what) + ": expected a non-negative integer, got '" + std::string(text) + "'");
  }
  return out;
}

bool parse_bool(std::string_view text, std::string_view what) {
  const auto t = trim(text);
  if (t == "true" || t == "1" || t == "yes" || t == "on") return true;
  if (t == "false" || t == "0" || t == "no" || t == "off") return false;
  throw ConfigError(std::string(what) + ": expected a boolean, got '" + std::string(text) + "'");
}

std::vector<std::string> split_list(std::string_view csv) {
  std::vector<std::string> out;
  while (true) {
    const auto comma = csv.find(',');
    const auto item = trim(csv.substr(0, comma));
    if (!item.empty()) out.emplace_back(item);
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

}  // namespace mst
