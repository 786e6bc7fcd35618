#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mst/attention.hpp"

namespace mst {

struct ScaleAllocation {
  ScaleSpec scale;
  std::size_t heads = 0;
  /// Pre-rounding head count, softmax(z) * N'.
  double fraction = 0.0;
};

struct LayerPlan {
  std::size_t layer = 1;  // 1-based
  std::vector<ScaleAllocation> allocations;

  std::size_t total_heads() const;
  /// One entry per constructed head, in candidate order (zero-count scales
  /// are skipped).
  std::vector<ScaleSpec> head_scales() const;
};

/// Preference logits for layer `layer` (1-based) of `layers`:
///   z_k = 0                   if layer == layers or k == |candidates|
///   z_k = z_{k+1} + alpha / l otherwise, for k = |candidates|-1 .. 0.
/// With candidates ordered smallest first, alpha > 0 favours small scales
/// in shallow layers and the top layer is always uniform.
std::vector<double> scale_logits(double alpha, std::size_t layer, std::size_t layers, std::size_t candidates);

/// Per-layer head allocation. Fractional counts are softmax(z) * heads;
/// integer counts use largest-remainder rounding (ties to the smaller scale)
/// so every layer sums to exactly `heads`.
///
/// Throws ConfigError for non-finite alpha, zero layers/heads or an empty
/// candidate list.
std::vector<LayerPlan> plan_scales(double alpha, std::size_t layers, std::size_t heads,
                                   std::span<const ScaleSpec> candidates);

/// Human-readable table: one row per layer, one column per candidate with
/// "count (fraction)". When `seq_len` is given, resolved widths are shown in
/// the header.
std::string describe_plan(std::span<const LayerPlan> plans, std::optional<std::size_t> seq_len = std::nullopt);

/// Line-oriented key = value rendering, e.g. "layer1.N/16.heads = 2".
std::string plan_key_values(std::span<const LayerPlan> plans, std::optional<std::size_t> seq_len = std::nullopt);

}  // namespace mst
