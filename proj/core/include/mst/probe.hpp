#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mst/model.hpp"
#include "mst/tensor.hpp"

namespace mst {

/// One attention edge: the key a query attends to most.
struct AttentionRecord {
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t query = 0;
  std::size_t key = 0;
  std::size_t distance = 0;
};

/// One record per row of a dense N x M map (key index = column). Ties go to
/// the smallest key index. Throws ConfigError on an empty map.
std::vector<AttentionRecord> extract_edges(const Tensor& attn, std::size_t layer = 0, std::size_t head = 0);

/// Windowed form: rows[j] holds the weights over the clipped window of
/// `width` around j in a sequence of rows.size() positions; keys are mapped
/// back to absolute positions.
std::vector<AttentionRecord> extract_window_edges(const std::vector<std::vector<double>>& rows, std::size_t width,
                                                  std::size_t layer = 0, std::size_t head = 0);

/// Bucket count used for sequences of length n when truncating at n/2.
std::size_t truncated_buckets(std::size_t n);

/// Percentage of records per distance bucket. Bucket b holds distance b;
/// anything at or beyond the last bucket is pooled there. With
/// `truncate_at_half` the bucket count is n/2 + 1, otherwise `buckets`
/// (0 means n). Throws ConfigError when `records` is empty.
std::vector<double> distance_histogram(std::span<const AttentionRecord> records, std::size_t n, std::size_t buckets,
                                       bool truncate_at_half);

struct HistogramRow {
  std::size_t layer = 0;
  std::optional<std::size_t> head;  // nullopt: all heads of the layer
  std::size_t records = 0;
  std::vector<double> percent;
};

/// Per-layer rows followed by per-(layer, head) rows, sorted by layer then
/// head.
std::vector<HistogramRow> group_histograms(std::span<const AttentionRecord> records, std::size_t n,
                                           std::size_t buckets, bool truncate_at_half);

/// Columns layer, head (or ALL), distance_bucket, percentage.
std::string histogram_csv(std::span<const HistogramRow> rows);

/// attention[layer][head] for one sequence, each a dense N x N map.
using AttentionMaps = std::vector<std::vector<Tensor>>;

/// Runs `model` (evaluation mode) on every sequence with attention
/// retained.
std::vector<AttentionMaps> collect_attention(const Model& model, const std::vector<std::vector<std::size_t>>& corpus);
std::vector<AttentionMaps> collect_attention(const Model& model, const std::vector<Tensor>& corpus);

/// Edges of every sequence, layer and head. Layers and heads are 1-based in
/// records so the CSV matches the usual layer numbering.
std::vector<AttentionRecord> edges_of(std::span<const AttentionMaps> maps);

/// Longest sequence among `maps` (rows of the first map of each).
std::size_t longest_sequence(std::span<const AttentionMaps> maps);

// Attention dump directory:
//   manifest.ini   [dump] format = mst-attention, version = 1, layers,
//                  heads, sentences, max_len
//   attention.bin  one named tensor per sequence, "sentence<i>", shape
//                  [layers, heads, N, N]
void save_attention_dump(const std::string& dir, std::span<const AttentionMaps> maps);
std::vector<AttentionMaps> load_attention_dump(const std::string& dir);

}  // namespace mst
