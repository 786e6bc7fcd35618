#include <memory>

#include "mst/attention.hpp"
#include "mst/gradcheck.hpp"
#include "mst/model.hpp"

namespace mst {

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero so abs/relu stay differentiable under +-h.
Tensor away_from_zero(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return t;
}

// Scalar probe: sum(out * w) for a fixed random w of the same shape.
Var weighted(Var out, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(out, out.graph().input(random_tensor(out.shape(), rng))));
}

GradCheckCase unary_case(std::string name, std::string scope, std::vector<Tensor> leaves,
                         std::function<Var(std::span<const Var>)> body, double tolerance = 1e-4) {
  auto shared = std::make_shared<std::vector<Tensor>>(std::move(leaves));
  return {std::move(name), std::move(scope), tolerance, [shared, body] {
            return grad_check([body](Graph&, std::span<const Var> v) { return weighted(body(v), 99); }, *shared);
          }};
}

MsLayer make_ms_layer(std::size_t d, std::size_t dh, const std::vector<ScaleSpec>& scales, std::uint64_t seed) {
  Rng rng(seed);
  MsLayer layer;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    layer.heads.push_back({HeadParams::init(d, dh, rng, "h" + std::to_string(i)), scales[i]});
  }
  layer.wo = init_projection("wo", scales.size() * dh, d, rng);
  layer.ln_gain = Parameter("g", random_tensor({d}, rng, 0.5, 1.5));
  layer.ln_bias = Parameter("b", random_tensor({d}, rng, -0.2, 0.2));
  return layer;
}

VanillaLayer make_vanilla_layer(std::size_t d, std::size_t dh, std::size_t heads, std::uint64_t seed) {
  Rng rng(seed);
  VanillaLayer layer;
  for (std::size_t i = 0; i < heads; ++i) layer.heads.push_back(HeadParams::init(d, dh, rng, "h" + std::to_string(i)));
  layer.wo = init_projection("wo", heads * dh, d, rng);
  layer.ln1_gain = Parameter("g1", random_tensor({d}, rng, 0.5, 1.5));
  layer.ln1_bias = Parameter("b1", random_tensor({d}, rng, -0.2, 0.2));
  layer.w1 = init_projection("w1", d, 4 * d, rng);
  layer.b1 = Parameter("bb1", random_tensor({4 * d}, rng, -0.1, 0.1));
  layer.w2 = init_projection("w2", 4 * d, d, rng);
  layer.b2 = Parameter("bb2", random_tensor({d}, rng, -0.1, 0.1));
  layer.ln2_gain = Parameter("g2", random_tensor({d}, rng, 0.5, 1.5));
  layer.ln2_bias = Parameter("b2", random_tensor({d}, rng, -0.2, 0.2));
  return layer;
}

std::vector<Parameter*> ms_params(MsLayer& l) {
  std::vector<Parameter*> out;
  for (auto& h : l.heads) {
    out.push_back(&h.params.wq);
    out.push_back(&h.params.wk);
    out.push_back(&h.params.wv);
  }
  out.insert(out.end(), {&l.wo, &l.ln_gain, &l.ln_bias});
  return out;
}

std::vector<Parameter*> vanilla_params(VanillaLayer& l) {
  std::vector<Parameter*> out;
  for (auto& h : l.heads) out.insert(out.end(), {&h.wq, &h.wk, &h.wv});
  out.insert(out.end(), {&l.wo, &l.ln1_gain, &l.ln1_bias, &l.w1, &l.b1, &l.w2, &l.b2, &l.ln2_gain, &l.ln2_bias});
  return out;
}

}  // namespace

std::vector<GradCheckCase> gradcheck_suite() {
  Rng rng(20240601);
  std::vector<GradCheckCase> cases;
  const auto add_case = [&](GradCheckCase c) { cases.push_back(std::move(c)); };

  // -- ops -----------------------------------------------------------------
  add_case(unary_case("matmul", "ops", {random_tensor({5, 4}, rng), random_tensor({4, 3}, rng)},
                      [](std::span<const Var> v) { return matmul(v[0], v[1]); }, 1e-6));
  add_case(unary_case("matmul_vector", "ops", {random_tensor({4}, rng), random_tensor({4, 3}, rng)},
                      [](std::span<const Var> v) { return matmul(v[0], v[1]); }, 1e-6));
  add_case(unary_case("linear", "ops", {random_tensor({3, 3}, rng)},
                      [](std::span<const Var> v) { return scale(v[0], 2.5); }, 1e-10));
  add_case(unary_case("transpose", "ops", {random_tensor({3, 5}, rng)},
                      [](std::span<const Var> v) { return transpose(v[0]); }));
  add_case(unary_case("add", "ops", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                      [](std::span<const Var> v) { return add(v[0], v[1]); }));
  add_case(unary_case("add_broadcast", "ops", {random_tensor({3, 4}, rng), random_tensor({4}, rng)},
                      [](std::span<const Var> v) { return add(v[0], v[1]); }));
  add_case(unary_case("sub", "ops", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                      [](std::span<const Var> v) { return sub(v[0], v[1]); }));
  add_case(unary_case("mul", "ops", {random_tensor({3, 4}, rng), random_tensor({3, 4}, rng)},
                      [](std::span<const Var> v) { return mul(v[0], v[1]); }));
  add_case(unary_case("abs", "ops", {away_from_zero({3, 4}, rng)}, [](std::span<const Var> v) { return abs(v[0]); }));
  add_case(unary_case("relu", "ops", {away_from_zero({3, 4}, rng)}, [](std::span<const Var> v) { return relu(v[0]); }));
  add_case(unary_case("softmax_rows", "ops", {random_tensor({4, 5}, rng, -2, 2)},
                      [](std::span<const Var> v) { return softmax_rows(v[0]); }));
  add_case(unary_case("softmax_matmul_chain", "ops", {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng)},
                      [](std::span<const Var> v) { return softmax_rows(matmul(v[0], v[1])); }, 1e-6));
  add_case(unary_case("layer_norm", "ops",
                      {random_tensor({3, 6}, rng, -2, 2), random_tensor({6}, rng), random_tensor({6}, rng)},
                      [](std::span<const Var> v) { return layer_norm(v[0], v[1], v[2]); }));
  add_case(unary_case("concat_last", "ops", {random_tensor({3, 2}, rng), random_tensor({3, 4}, rng)},
                      [](std::span<const Var> v) { return concat_last(v); }));
  add_case(unary_case("concat_rows", "ops", {random_tensor({2, 3}, rng), random_tensor({3}, rng)},
                      [](std::span<const Var> v) { return concat_rows(v); }));
  add_case(unary_case("reshape", "ops", {random_tensor({2, 6}, rng)},
                      [](std::span<const Var> v) { return reshape(v[0], {3, 4}); }));
  add_case(unary_case("slice_rows", "ops", {random_tensor({5, 3}, rng)},
                      [](std::span<const Var> v) { return slice_rows(v[0], 1, 4); }));
  add_case(unary_case("slice_cols", "ops", {random_tensor({3, 5}, rng)},
                      [](std::span<const Var> v) { return slice_cols(v[0], 2, 5); }));
  add_case(unary_case("max_over_positions", "ops", {random_tensor({5, 4}, rng)},
                      [](std::span<const Var> v) { return max_over_positions(v[0]); }));
  add_case(unary_case("gather_rows", "ops", {random_tensor({6, 3}, rng)}, [](std::span<const Var> v) {
    const std::vector<std::size_t> ids = {4, 0, 4, 2};
    return gather_rows(v[0], ids);
  }));
  add_case(unary_case("dropout", "ops", {random_tensor({4, 5}, rng)}, [](std::span<const Var> v) {
    Rng mask_rng(7);
    return dropout(v[0], 0.3, true, mask_rng);
  }));
  add_case(unary_case("mean", "ops", {random_tensor({3, 4}, rng)},
                      [](std::span<const Var> v) { return scale(mean(v[0]), 1.0); }));
  add_case({"mse_loss", "ops", 1e-4, [t = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{
                                          random_tensor({6}, rng), random_tensor({6}, rng)})] {
              return grad_check([](Graph&, std::span<const Var> v) { return mse_loss(v[0], v[1]); }, *t);
            }});
  add_case({"cross_entropy", "ops", 1e-4, [t = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{
                                               random_tensor({5}, rng, -2, 2)})] {
              return grad_check([](Graph&, std::span<const Var> v) { return cross_entropy(v[0], 3); }, *t);
            }});
  for (std::size_t width : {1, 3, 5, 13}) {
    add_case(unary_case("window_attention_w" + std::to_string(width), "ops",
                        {random_tensor({6, 3}, rng), random_tensor({6, 3}, rng), random_tensor({6, 2}, rng)},
                        [width](std::span<const Var> v) { return window_attention(v[0], v[1], v[2], width); }));
  }

  // -- attention -----------------------------------------------------------
  {
    auto layer = std::make_shared<MsLayer>(make_ms_layer(8, 4, {ScaleSpec::fixed(3), ScaleSpec::ratio(2)}, 11));
    auto h = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{random_tensor({6, 8}, rng)});
    add_case({"sasa_head", "attention", 1e-4, [layer, h] {
                return grad_check([layer](Graph&, std::span<const Var> v) {
                  return weighted(sasa_head(v[0], layer->heads[0].params, 3), 5);
                }, *h);
              }});
    add_case({"msmsa_input", "attention", 1e-4, [layer, h] {
                return grad_check([layer](Graph&, std::span<const Var> v) {
                  return weighted(msmsa(v[0], layer->heads, layer->wo), 5);
                }, *h);
              }});
    add_case({"msmsa_params", "attention", 1e-4, [layer, h] {
                auto params = ms_params(*layer);
                params.resize(params.size() - 2);  // layer norm not involved
                return grad_check_params([layer, h](Graph& g) {
                  return weighted(msmsa(g.input((*h)[0]), layer->heads, layer->wo), 5);
                }, params);
              }});
    auto vl = std::make_shared<VanillaLayer>(make_vanilla_layer(8, 4, 2, 12));
    add_case({"msa_standard", "attention", 1e-4, [vl, h] {
                return grad_check([vl](Graph&, std::span<const Var> v) {
                  return weighted(msa_standard(v[0], vl->heads, vl->wo), 5);
                }, *h);
              }});
  }

  // -- layers --------------------------------------------------------------
  {
    auto layer = std::make_shared<MsLayer>(
        make_ms_layer(12, 4, {ScaleSpec::fixed(1), ScaleSpec::fixed(3), ScaleSpec::ratio(2)}, 21));
    auto h = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{random_tensor({7, 12}, rng)});
    add_case({"ms_layer_input", "layers", 1e-4, [layer, h] {
                return grad_check([layer](Graph&, std::span<const Var> v) {
                  return weighted(ms_transformer_layer(v[0], *layer, {}), 6);
                }, *h);
              }});
    add_case({"ms_layer_params", "layers", 1e-4, [layer, h] {
                return grad_check_params([layer, h](Graph& g) {
                  return weighted(ms_transformer_layer(g.input((*h)[0]), *layer, {}), 6);
                }, ms_params(*layer));
              }});
    auto vl = std::make_shared<VanillaLayer>(make_vanilla_layer(8, 4, 2, 22));
    auto hv = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{random_tensor({5, 8}, rng)});
    add_case({"vanilla_layer_input", "layers", 1e-4, [vl, hv] {
                return grad_check([vl](Graph&, std::span<const Var> v) {
                  return weighted(vanilla_transformer_layer(v[0], *vl, {}, true, false), 6);
                }, *hv);
              }});
    add_case({"vanilla_layer_params", "layers", 1e-4, [vl, hv] {
                return grad_check_params([vl, hv](Graph& g) {
                  return weighted(vanilla_transformer_layer(g.input((*hv)[0]), *vl, {}, true, false), 6);
                }, vanilla_params(*vl));
              }});
    add_case({"pair_features", "layers", 1e-4, [t = std::make_shared<std::vector<Tensor>>(std::vector<Tensor>{
                                                    away_from_zero({4}, rng), away_from_zero({4}, rng)})] {
                return grad_check([](Graph&, std::span<const Var> v) { return weighted(pair_features(v[0], v[1]), 8); },
                                  *t);
              }});
  }

  // -- model ---------------------------------------------------------------
  {
    ModelConfig mc;
    mc.layers = 2;
    mc.heads = 4;
    mc.hidden = 8;
    mc.head_dim = 2;
    mc.scales = {ScaleSpec::fixed(1), ScaleSpec::fixed(3), ScaleSpec::ratio(4), ScaleSpec::ratio(2)};
    mc.alpha = 0.5;
    mc.vocab_size = 7;
    mc.classes = 3;
    mc.mlp_hidden = 6;
    mc.init_seed = 31;
    auto model = std::make_shared<Model>(mc);
    const std::vector<std::size_t> tokens = {3, 1, 4, 1, 5, 6};
    add_case({"ms_classifier_end_to_end", "model", 1e-4, [model, tokens] {
                return grad_check_params([model, tokens](Graph& g) { return cross_entropy(model->forward(g, tokens), 2); },
                                         model->parameters());
              }});

    ModelConfig vc = mc;
    vc.arch = Architecture::Vanilla;
    vc.use_positional = true;
    vc.max_len = 8;
    vc.input = InputKind::Vectors;
    vc.input_dim = 3;
    vc.task = TaskKind::Regress;
    vc.output_dim = 2;
    auto vmodel = std::make_shared<Model>(vc);
    auto x = std::make_shared<Tensor>(random_tensor({5, 3}, rng, 0.0, 1.0));
    auto y = std::make_shared<Tensor>(random_tensor({2}, rng));
    add_case({"vanilla_regressor_end_to_end", "model", 1e-4, [vmodel, x, y] {
                return grad_check_params([vmodel, x, y](Graph& g) {
                  return mse_loss(vmodel->forward(g, *x), g.input(*y));
                }, vmodel->parameters());
              }});
  }
  return cases;
}

}  // namespace mst
