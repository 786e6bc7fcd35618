#include "mst/attention.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>

#include "mst/error.hpp"

namespace mst {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::size_t parse_count(std::string_view s, std::string_view whole) {
  std::size_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || ptr != s.data() + s.size()) {
    throw ConfigError("bad scale '" + std::string(whole) + "': expected an odd integer or N/k");
  }
  return v;
}

}  // namespace

ScaleSpec ScaleSpec::fixed(std::size_t width) {
  if (width == 0 || width % 2 == 0) {
    throw ConfigError("scale width must be an odd positive integer, got " + std::to_string(width));
  }
  return ScaleSpec(Kind::Fixed, width);
}

ScaleSpec ScaleSpec::ratio(std::size_t denominator) {
  if (denominator == 0) throw ConfigError("scale N/0 is undefined");
  return ScaleSpec(Kind::Ratio, denominator);
}

ScaleSpec ScaleSpec::parse(std::string_view text) {
  const std::string_view t = trim(text);
  if (t == "N" || t == "n") return ratio(1);
  if (t.size() > 2 && (t[0] == 'N' || t[0] == 'n') && t[1] == '/') return ratio(parse_count(t.substr(2), t));
  return fixed(parse_count(t, t));
}

std::string ScaleSpec::to_string() const {
  if (kind_ == Kind::Fixed) return std::to_string(value_);
  return value_ == 1 ? "N" : "N/" + std::to_string(value_);
}

std::vector<ScaleSpec> parse_scales(std::string_view csv) {
  std::vector<ScaleSpec> out;
  while (true) {
    const auto comma = csv.find(',');
    out.push_back(ScaleSpec::parse(csv.substr(0, comma)));
    if (comma == std::string_view::npos) break;
    csv.remove_prefix(comma + 1);
  }
  return out;
}

std::string format_scales(std::span<const ScaleSpec> scales) {
  std::string s;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (i) s += ",";
    s += scales[i].to_string();
  }
  return s;
}

std::size_t resolve_scale(const ScaleSpec& spec, std::size_t n) {
  if (n == 0) throw std::invalid_argument("resolve_scale: sequence length must be >= 1");
  std::size_t w = spec.width();
  if (spec.kind() == ScaleSpec::Kind::Ratio) {
    const std::size_t k = spec.denominator();
    w = (2 * n + k) / (2 * k);  // round half up
    if (w == 0) w = 1;
    if (w % 2 == 0) ++w;
  }
  return std::min(w, 2 * n - 1);
}

Tensor extract_context(const Tensor& x, std::size_t j, std::size_t width) {
  const std::size_t n = x.rows();
  if (j >= n) throw std::out_of_range("extract_context: position " + std::to_string(j) + " >= " + std::to_string(n));
  const std::size_t r = (width - 1) / 2;
  const std::size_t lo = j > r ? j - r : 0;
  const std::size_t hi = std::min(n - 1, j + r);
  const std::size_t d = x.cols();
  std::vector<double> data(x.values().begin() + static_cast<std::ptrdiff_t>(lo * d),
                           x.values().begin() + static_cast<std::ptrdiff_t>((hi + 1) * d));
  return Tensor({hi - lo + 1, d}, std::move(data));
}

Var extract_context(Var x, std::size_t j, std::size_t width) {
  const std::size_t n = x.value().rows();
  if (j >= n) throw std::out_of_range("extract_context: position " + std::to_string(j) + " >= " + std::to_string(n));
  const std::size_t r = (width - 1) / 2;
  const std::size_t lo = j > r ? j - r : 0;
  const std::size_t hi = std::min(n - 1, j + r);
  return slice_rows(x, lo, hi + 1);
}

Parameter init_projection(const std::string& name, std::size_t rows, std::size_t cols, Rng& rng) {
  const double a = 1.0 / std::sqrt(static_cast<double>(rows));
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-a, a);
  return Parameter(name, std::move(t));
}

HeadParams HeadParams::init(std::size_t model_dim, std::size_t head_dim, Rng& rng, const std::string& prefix) {
  return HeadParams{init_projection(prefix + ".wq", model_dim, head_dim, rng),
                    init_projection(prefix + ".wk", model_dim, head_dim, rng),
                    init_projection(prefix + ".wv", model_dim, head_dim, rng)};
}

namespace {

// Every head's Q, K and V from a single product H * [Wq_1 .. Wq_n Wk_1 ..
// Wv_n]; the per-head blocks are column slices of the result.
std::vector<std::array<Var, 3>> project_heads(Var h, std::span<const HeadParams* const> heads) {
  Graph& g = h.graph();
  std::vector<Var> blocks;
  blocks.reserve(3 * heads.size());
  for (const HeadParams* p : heads) blocks.push_back(g.param(p->wq));
  for (const HeadParams* p : heads) blocks.push_back(g.param(p->wk));
  for (const HeadParams* p : heads) blocks.push_back(g.param(p->wv));
  Var all = matmul(h, concat_last(blocks));
  std::size_t width = 0;
  for (const HeadParams* p : heads) width += p->head_dim();
  std::vector<std::array<Var, 3>> out(heads.size());
  for (std::size_t part = 0; part < 3; ++part) {
    std::size_t off = part * width;
    for (std::size_t i = 0; i < heads.size(); ++i) {
      out[i][part] = slice_cols(all, off, off + heads[i]->head_dim());
      off += heads[i]->head_dim();
    }
  }
  return out;
}

}  // namespace

Var sasa_head(Var h, const HeadParams& params, std::size_t width, Tensor* weights) {
  Graph& g = h.graph();
  if (h.value().cols() != params.model_dim()) {
    throw DimensionError("sasa_head: input width " + std::to_string(h.value().cols()) + " vs projection " +
                         shape_string(params.wq.value.shape()));
  }
  Var q = matmul(h, g.param(params.wq));
  Var k = matmul(h, g.param(params.wk));
  Var v = matmul(h, g.param(params.wv));
  return window_attention(q, k, v, width, weights);
}

Var msmsa(Var h, std::span<const AttentionHead> heads, const Parameter& wo, std::vector<Tensor>* weights) {
  if (heads.empty()) throw DimensionError("msmsa: no heads");
  const std::size_t n = h.value().rows();
  std::size_t concat_dim = 0;
  for (const auto& head : heads) concat_dim += head.params.head_dim();
  if (wo.value.shape()[0] != concat_dim) {
    throw DimensionError("msmsa: " + std::to_string(heads.size()) + " heads give " + std::to_string(concat_dim) +
                         " features but W_o is " + shape_string(wo.value.shape()));
  }
  if (weights) weights->assign(heads.size(), Tensor());
  std::vector<const HeadParams*> params;
  for (const auto& head : heads) params.push_back(&head.params);
  const auto qkv = project_heads(h, params);
  std::vector<Var> outs;
  outs.reserve(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const std::size_t width = resolve_scale(heads[i].scale, n);
    outs.push_back(window_attention(qkv[i][0], qkv[i][1], qkv[i][2], width, weights ? &(*weights)[i] : nullptr));
  }
  Var cat = outs.size() == 1 ? outs.front() : concat_last(outs);
  return matmul(cat, h.graph().param(wo));
}

Var msa_standard(Var h, std::span<const HeadParams> heads, const Parameter& wo, std::vector<Tensor>* weights) {
  if (heads.empty()) throw DimensionError("msa_standard: no heads");
  Graph& g = h.graph();
  std::size_t concat_dim = 0;
  for (const auto& p : heads) {
    if (p.model_dim() != h.value().cols()) {
      throw DimensionError("msa_standard: input " + shape_string(h.shape()) + " vs projection " +
                           shape_string(p.wq.value.shape()));
    }
    concat_dim += p.head_dim();
  }
  if (wo.value.shape()[0] != concat_dim) {
    throw DimensionError("msa_standard: heads give " + std::to_string(concat_dim) + " features but W_o is " +
                         shape_string(wo.value.shape()));
  }
  if (weights) weights->clear();
  std::vector<const HeadParams*> params;
  for (const auto& p : heads) params.push_back(&p);
  const auto qkv = project_heads(h, params);
  std::vector<Var> outs;
  outs.reserve(heads.size());
  for (std::size_t i = 0; i < heads.size(); ++i) {
    const HeadParams& p = heads[i];
    const Var& q = qkv[i][0];
    const Var& k = qkv[i][1];
    const Var& v = qkv[i][2];
    Var scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(p.head_dim())));
    Var attn = softmax_rows(scores);
    if (weights) weights->push_back(attn.value());
    outs.push_back(matmul(attn, v));
  }
  Var cat = outs.size() == 1 ? outs.front() : concat_last(outs);
  return matmul(cat, g.param(wo));
}

}  // namespace mst
