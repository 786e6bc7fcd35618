#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mst/graph.hpp"
#include "mst/random.hpp"

namespace mst {

/// Receptive scope of one attention head.
///
/// The scale is the *total* window width: a head of scale 3 sees the query
/// position and one neighbour on each side, so radius = (width - 1) / 2.
/// Widths are always odd. A ratio scale ("N/8") is resolved against the
/// actual sequence length at run time.
class ScaleSpec {
 public:
  enum class Kind { Fixed, Ratio };

  /// Throws ConfigError unless width is odd and >= 1.
  static ScaleSpec fixed(std::size_t width);
  /// Scale N / denominator. Throws ConfigError for denominator 0.
  static ScaleSpec ratio(std::size_t denominator);
  /// Parses "3", "N/16" or "N".
  static ScaleSpec parse(std::string_view text);

  Kind kind() const { return kind_; }
  std::size_t width() const { return value_; }
  std::size_t denominator() const { return value_; }
  std::string to_string() const;

  friend bool operator==(const ScaleSpec&, const ScaleSpec&) = default;

 private:
  ScaleSpec(Kind k, std::size_t v) : kind_(k), value_(v) {}
  Kind kind_ = Kind::Fixed;
  std::size_t value_ = 1;
};

/// Comma separated list, e.g. "1,3,N/16,N/8".
std::vector<ScaleSpec> parse_scales(std::string_view csv);
std::string format_scales(std::span<const ScaleSpec> scales);

/// Effective odd window width for sequence length n >= 1.
///
/// Fixed(w) -> w. Ratio(k) -> round(n / k) with halves rounded up, bumped to
/// the next odd number when even, at least 1. Both are capped at 2n - 1,
/// which already covers every key from every query.
std::size_t resolve_scale(const ScaleSpec& spec, std::size_t n);

/// Rows j - r .. j + r of x (r = (width - 1) / 2), clipped to the sequence.
Tensor extract_context(const Tensor& x, std::size_t j, std::size_t width);
Var extract_context(Var x, std::size_t j, std::size_t width);

/// Per-head query/key/value projections, each D x Dh.
struct HeadParams {
  Parameter wq;
  Parameter wk;
  Parameter wv;

  std::size_t model_dim() const { return wq.value.shape()[0]; }
  std::size_t head_dim() const { return wq.value.shape()[1]; }

  /// Uniform(-1/sqrt(D), 1/sqrt(D)) initialization.
  static HeadParams init(std::size_t model_dim, std::size_t head_dim, Rng& rng, const std::string& prefix);
};

struct AttentionHead {
  HeadParams params;
  ScaleSpec scale;
};

/// Scale-aware self-attention head. out_j = softmax(q_j K_w^T / sqrt(Dh)) V_w
/// over the clipped window of width `width` around j. `weights`, when given,
/// receives the dense N x N attention matrix.
Var sasa_head(Var h, const HeadParams& params, std::size_t width, Tensor* weights = nullptr);

/// Multi-scale multi-head attention: heads concatenated along features, then
/// projected by `wo` ((heads * Dh) x D). Ratio scales resolve against h's row
/// count. `weights`, when given, receives one N x N matrix per head.
Var msmsa(Var h, std::span<const AttentionHead> heads, const Parameter& wo, std::vector<Tensor>* weights = nullptr);

/// Standard full-sequence multi-head self-attention built from dense
/// primitives (matmul / transpose / softmax_rows). Serves both as the
/// vanilla Transformer kernel and as the oracle for the windowed path.
Var msa_standard(Var h, std::span<const HeadParams> heads, const Parameter& wo,
                 std::vector<Tensor>* weights = nullptr);

/// Uniform(-1/sqrt(rows), 1/sqrt(rows)) matrix parameter.
Parameter init_projection(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng);

}  // namespace mst
