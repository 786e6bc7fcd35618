#include "mst/probe.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "mst/config.hpp"
#include "mst/error.hpp"
#include "mst/graph.hpp"

namespace mst {

namespace {

std::size_t argmax_first(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

std::size_t dist(std::size_t a, std::size_t b) { return a > b ? a - b : b - a; }

}  // namespace

std::vector<AttentionRecord> extract_edges(const Tensor& attn, std::size_t layer, std::size_t head) {
  if (attn.empty() || attn.rank() != 2) throw ConfigError("extract_edges: expected a non-empty N x M map");
  std::vector<AttentionRecord> out;
  out.reserve(attn.rows());
  for (std::size_t j = 0; j < attn.rows(); ++j) {
    const std::size_t key = argmax_first(attn.row(j));
    out.push_back({layer, head, j, key, dist(j, key)});
  }
  return out;
}

std::vector<AttentionRecord> extract_window_edges(const std::vector<std::vector<double>>& rows, std::size_t width,
                                                  std::size_t layer, std::size_t head) {
  if (rows.empty()) throw ConfigError("extract_window_edges: empty map");
  if (width % 2 == 0) throw ConfigError("extract_window_edges: width must be odd");
  const std::size_t n = rows.size();
  const std::size_t r = (width - 1) / 2;
  std::vector<AttentionRecord> out;
  out.reserve(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t lo = j > r ? j - r : 0;
    const std::size_t hi = std::min(n - 1, j + r);
    if (rows[j].size() != hi - lo + 1) {
      throw DimensionError("extract_window_edges: row " + std::to_string(j) + " has " +
                           std::to_string(rows[j].size()) + " weights, window holds " + std::to_string(hi - lo + 1));
    }
    const std::size_t key = lo + argmax_first(rows[j]);
    out.push_back({layer, head, j, key, dist(j, key)});
  }
  return out;
}

std::size_t truncated_buckets(std::size_t n) { return n / 2 + 1; }

std::vector<double> distance_histogram(std::span<const AttentionRecord> records, std::size_t n, std::size_t buckets,
                                       bool truncate_at_half) {
  if (records.empty()) throw ConfigError("distance_histogram: no records");
  std::size_t b = truncate_at_half ? truncated_buckets(n) : (buckets ? buckets : n);
  b = std::max<std::size_t>(b, 1);
  std::vector<std::size_t> counts(b, 0);
  for (const auto& rec : records) ++counts[std::min(rec.distance, b - 1)];
  std::vector<double> pct(b);
  const double total = static_cast<double>(records.size());
  for (std::size_t i = 0; i < b; ++i) pct[i] = 100.0 * static_cast<double>(counts[i]) / total;
  return pct;
}

std::vector<HistogramRow> group_histograms(std::span<const AttentionRecord> records, std::size_t n,
                                           std::size_t buckets, bool truncate_at_half) {
  std::map<std::size_t, std::vector<AttentionRecord>> by_layer;
  std::map<std::pair<std::size_t, std::size_t>, std::vector<AttentionRecord>> by_head;
  for (const auto& r : records) {
    by_layer[r.layer].push_back(r);
    by_head[{r.layer, r.head}].push_back(r);
  }
  std::vector<HistogramRow> out;
  for (const auto& [layer, recs] : by_layer) {
    out.push_back({layer, std::nullopt, recs.size(), distance_histogram(recs, n, buckets, truncate_at_half)});
  }
  for (const auto& [key, recs] : by_head) {
    out.push_back({key.first, key.second, recs.size(), distance_histogram(recs, n, buckets, truncate_at_half)});
  }
  return out;
}

std::string histogram_csv(std::span<const HistogramRow> rows) {
  std::ostringstream os;
  os << "layer,head,distance_bucket,percentage\n" << std::setprecision(17);
  for (const auto& row : rows) {
    const std::string head = row.head ? std::to_string(*row.head) : "ALL";
    for (std::size_t b = 0; b < row.percent.size(); ++b) {
      os << row.layer << "," << head << "," << b << "," << row.percent[b] << "\n";
    }
  }
  return os.str();
}

// ---------------------------------------------------------------------------

std::vector<AttentionMaps> collect_attention(const Model& model, const std::vector<std::vector<std::size_t>>& corpus) {
  std::vector<AttentionMaps> out;
  out.reserve(corpus.size());
  for (const auto& seq : corpus) {
    Graph g(false);
    out.push_back(model.encode(g, seq, {false, nullptr, true}).attention);
  }
  return out;
}

std::vector<AttentionMaps> collect_attention(const Model& model, const std::vector<Tensor>& corpus) {
  std::vector<AttentionMaps> out;
  out.reserve(corpus.size());
  for (const auto& seq : corpus) {
    Graph g(false);
    out.push_back(model.encode(g, seq, {false, nullptr, true}).attention);
  }
  return out;
}

std::vector<AttentionRecord> edges_of(std::span<const AttentionMaps> maps) {
  std::vector<AttentionRecord> out;
  for (const auto& seq : maps) {
    for (std::size_t l = 0; l < seq.size(); ++l) {
      for (std::size_t h = 0; h < seq[l].size(); ++h) {
        const auto recs = extract_edges(seq[l][h], l + 1, h + 1);
        out.insert(out.end(), recs.begin(), recs.end());
      }
    }
  }
  return out;
}

std::size_t longest_sequence(std::span<const AttentionMaps> maps) {
  std::size_t n = 0;
  for (const auto& seq : maps)
    if (!seq.empty() && !seq.front().empty()) n = std::max(n, seq.front().front().rows());
  return n;
}

void save_attention_dump(const std::string& dir, std::span<const AttentionMaps> maps) {
  if (maps.empty()) throw ConfigError("save_attention_dump: no sequences");
  const std::size_t layers = maps.front().size();
  const std::size_t heads = layers ? maps.front().front().size() : 0;
  std::filesystem::create_directories(dir);
  std::ofstream bin(std::filesystem::path(dir) / "attention.bin", std::ios::binary);
  if (!bin) throw IoError("cannot write " + dir + "/attention.bin");
  for (std::size_t s = 0; s < maps.size(); ++s) {
    if (maps[s].size() != layers) throw DimensionError("save_attention_dump: layer count differs between sequences");
    const std::size_t n = maps[s].front().front().rows();
    Tensor t({layers, heads, n, n});
    std::size_t at = 0;
    for (const auto& layer : maps[s]) {
      if (layer.size() != heads) {
        throw DimensionError("save_attention_dump: every layer must have the same head count");
      }
      for (const auto& m : layer) {
        if (m.shape() != Shape{n, n}) throw DimensionError("save_attention_dump: maps must be N x N");
        std::copy(m.values().begin(), m.values().end(), t.values().begin() + static_cast<std::ptrdiff_t>(at));
        at += m.size();
      }
    }
    write_named_tensor(bin, "sentence" + std::to_string(s), t);
  }
  if (!bin) throw IoError("failed writing " + dir + "/attention.bin");
  KeyValueConfig manifest;
  manifest.set("dump.format", "mst-attention");
  manifest.set("dump.version", "1");
  manifest.set("dump.layers", std::to_string(layers));
  manifest.set("dump.heads", std::to_string(heads));
  manifest.set("dump.sentences", std::to_string(maps.size()));
  manifest.set("dump.max_len", std::to_string(longest_sequence(maps)));
  manifest.save((std::filesystem::path(dir) / "manifest.ini").string());
}

std::vector<AttentionMaps> load_attention_dump(const std::string& dir) {
  const auto manifest = KeyValueConfig::load((std::filesystem::path(dir) / "manifest.ini").string());
  manifest.require_known("dump", {"format", "version", "layers", "heads", "sentences", "max_len"});
  if (manifest.get_string("dump.format", "") != "mst-attention") {
    throw IoError(dir + ": manifest is not an attention dump");
  }
  if (manifest.get_size("dump.version", 0) != 1) throw IoError(dir + ": unsupported attention dump version");
  const std::size_t layers = manifest.get_size("dump.layers", 0);
  const std::size_t heads = manifest.get_size("dump.heads", 0);
  const std::size_t sentences = manifest.get_size("dump.sentences", 0);
  const std::string bin_path = (std::filesystem::path(dir) / "attention.bin").string();
  std::ifstream bin(bin_path, std::ios::binary);
  if (!bin) throw IoError("cannot open " + bin_path);
  std::vector<AttentionMaps> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    auto [name, t] = read_named_tensor(bin);
    if (name != "sentence" + std::to_string(s)) throw IoError(bin_path + ": expected sentence" + std::to_string(s) + ", found " + name);
    if (t.rank() != 4 || t.shape()[0] != layers || t.shape()[1] != heads || t.shape()[2] != t.shape()[3]) {
      throw IoError(bin_path + ": " + name + " has shape " + shape_string(t.shape()) + ", manifest says " +
                    std::to_string(layers) + " layers x " + std::to_string(heads) + " heads of N x N");
    }
    const std::size_t n = t.shape()[2];
    AttentionMaps maps(layers, std::vector<Tensor>(heads));
    std::size_t at = 0;
    for (std::size_t l = 0; l < layers; ++l) {
      for (std::size_t h = 0; h < heads; ++h) {
        const auto begin = t.values().begin() + static_cast<std::ptrdiff_t>(at);
        maps[l][h] = Tensor({n, n}, std::vector<double>(begin, begin + static_cast<std::ptrdiff_t>(n * n)));
        at += n * n;
      }
    }
    out.push_back(std::move(maps));
  }
  return out;
}

}  // namespace mst
