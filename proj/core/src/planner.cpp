#include "mst/planner.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "mst/error.hpp"

namespace mst {

std::size_t LayerPlan::total_heads() const {
  std::size_t n = 0;
  for (const auto& a : allocations) n += a.heads;
  return n;
}

std::vector<ScaleSpec> LayerPlan::head_scales() const {
  std::vector<ScaleSpec> out;
  for (const auto& a : allocations) out.insert(out.end(), a.heads, a.scale);
  return out;
}

std::vector<double> scale_logits(double alpha, std::size_t layer, std::size_t layers, std::size_t candidates) {
  std::vector<double> z(candidates, 0.0);
  if (layer == layers) return z;
  const double step = alpha / static_cast<double>(layer);
  double next = 0.0;  // z at k == |candidates|
  for (std::size_t k = candidates; k-- > 0;) {
    z[k] = next + step;
    next = z[k];
  }
  return z;
}

std::vector<LayerPlan> plan_scales(double alpha, std::size_t layers, std::size_t heads,
                                   std::span<const ScaleSpec> candidates) {
  if (!std::isfinite(alpha)) throw ConfigError("plan_scales: alpha must be finite");
  if (layers == 0) throw ConfigError("plan_scales: need at least one layer");
  if (heads == 0) throw ConfigError("plan_scales: need at least one head");
  if (candidates.empty()) throw ConfigError("plan_scales: empty candidate list");

  const std::size_t k_count = candidates.size();
  std::vector<LayerPlan> plans;
  plans.reserve(layers);
  for (std::size_t l = 1; l <= layers; ++l) {
    const auto z = scale_logits(alpha, l, layers, k_count);
    const double mx = *std::max_element(z.begin(), z.end());
    std::vector<double> frac(k_count);
    double total = 0.0;
    for (std::size_t k = 0; k < k_count; ++k) total += frac[k] = std::exp(z[k] - mx);
    for (auto& f : frac) f = f / total * static_cast<double>(heads);

    std::vector<std::size_t> count(k_count);
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < k_count; ++k) {
      count[k] = static_cast<std::size_t>(std::floor(frac[k]));
      assigned += count[k];
    }
    // Largest remainder; remainders within 1e-9 count as tied and go to the
    // smaller scale (stable sort keeps candidate order).
    std::vector<std::size_t> order(k_count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      const double ra = frac[a] - std::floor(frac[a]);
      const double rb = frac[b] - std::floor(frac[b]);
      return ra > rb + 1e-9;
    });
    for (std::size_t i = 0; assigned < heads; ++i, ++assigned) ++count[order[i % k_count]];

    LayerPlan plan;
    plan.layer = l;
    for (std::size_t k = 0; k < k_count; ++k) plan.allocations.push_back({candidates[k], count[k], frac[k]});
    plans.push_back(std::move(plan));
  }
  return plans;
}

std::string describe_plan(std::span<const LayerPlan> plans, std::optional<std::size_t> seq_len) {
  if (plans.empty() || plans.front().allocations.empty()) throw ConfigError("describe_plan: empty plan");
  std::ostringstream os;
  constexpr int kCol = 16;
  os << std::left << std::setw(8) << "layer";
  for (const auto& a : plans.front().allocations) {
    std::string head = a.scale.to_string();
    if (seq_len) head += " (w=" + std::to_string(resolve_scale(a.scale, *seq_len)) + ")";
    os << std::setw(kCol) << head;
  }
  os << "total\n";
  for (const auto& p : plans) {
    os << std::setw(8) << p.layer;
    for (const auto& a : p.allocations) {
      std::ostringstream cell;
      cell << a.heads << " (" << std::fixed << std::setprecision(3) << a.fraction << ")";
      os << std::setw(kCol) << cell.str();
    }
    os << p.total_heads() << "\n";
  }
  return os.str();
}

std::string plan_key_values(std::span<const LayerPlan> plans, std::optional<std::size_t> seq_len) {
  std::ostringstream os;
  for (const auto& p : plans) {
    for (const auto& a : p.allocations) {
      const std::string key = "layer" + std::to_string(p.layer) + "." + a.scale.to_string();
      os << key << ".heads = " << a.heads << "\n";
      os << key << ".fraction = " << std::setprecision(17) << a.fraction << "\n";
      if (seq_len) os << key << ".width = " << resolve_scale(a.scale, *seq_len) << "\n";
    }
  }
  return os.str();
}

}  // namespace mst
