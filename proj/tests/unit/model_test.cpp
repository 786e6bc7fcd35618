#include <gtest/gtest.h>

#include <filesystem>

#include "mst/error.hpp"
#include "mst/model.hpp"
#include "oracles.hpp"

using namespace mst;

namespace {

MsLayer random_ms_layer(std::size_t d, std::size_t dh, std::vector<ScaleSpec> scales, Rng& rng) {
  MsLayer layer;
  for (std::size_t i = 0; i < scales.size(); ++i) {
    layer.heads.push_back({HeadParams{Parameter("wq", oracle::random_tensor({d, dh}, rng)),
                                      Parameter("wk", oracle::random_tensor({d, dh}, rng)),
                                      Parameter("wv", oracle::random_tensor({d, dh}, rng))},
                           scales[i]});
  }
  layer.wo = Parameter("wo", oracle::random_tensor({scales.size() * dh, d}, rng));
  layer.ln_gain = Parameter("g", oracle::random_tensor({d}, rng, 0.5, 1.5));
  layer.ln_bias = Parameter("b", oracle::random_tensor({d}, rng));
  return layer;
}

void randomize(Model& m, Rng& rng) {
  for (Parameter* p : m.parameters())
    for (double& v : p->value.values()) v = rng.uniform(-0.5, 0.5);
}

ModelConfig token_config() {
  ModelConfig c;
  c.vocab_size = 20;
  c.hidden = 8;
  c.head_dim = 2;
  c.heads = 4;
  c.classes = 3;
  c.mlp_hidden = 5;
  c.scales = {ScaleSpec::fixed(1), ScaleSpec::fixed(3)};
  return c;
}

}  // namespace

TEST(MsLayer, ZeroProjectionsReduceToLayerNorm) {
  Rng rng(1);
  MsLayer layer = random_ms_layer(6, 2, {ScaleSpec::fixed(3), ScaleSpec::ratio(2)}, rng);
  for (auto& h : layer.heads) {
    h.params.wq.value.fill(0.0);
    h.params.wk.value.fill(0.0);
    h.params.wv.value.fill(0.0);
  }
  const Tensor h = oracle::random_tensor({5, 6}, rng);
  Graph g;
  const Tensor out = ms_transformer_layer(g.input(h), layer, {}).value();
  for (std::size_t r = 0; r < 5; ++r) {
    const auto expect = oracle::layer_norm({h.row(r).begin(), h.row(r).end()}, layer.ln_gain.value.values(),
                                           layer.ln_bias.value.values(), 1e-5);
    for (std::size_t c = 0; c < 6; ++c) EXPECT_NEAR(out.at(r, c), expect[c], 1e-13);
  }
}

TEST(MsLayer, ShapePreservedForAnyLength) {
  Rng rng(2);
  const MsLayer layer = random_ms_layer(6, 2, {ScaleSpec::fixed(1), ScaleSpec::ratio(4), ScaleSpec::ratio(2)}, rng);
  for (std::size_t n = 1; n <= 20; ++n) {
    Graph g;
    EXPECT_EQ(ms_transformer_layer(g.input(oracle::random_tensor({n, 6}, rng)), layer, {}).shape(), (Shape{n, 6}));
  }
  Graph g;
  EXPECT_THROW(ms_transformer_layer(g.input(Tensor::matrix(3, 5)), layer, {}), DimensionError);
}

TEST(SentenceRepresentation, Examples) {
  Graph g;
  const Tensor one = Tensor::from_rows({{1, -2, 3}});
  EXPECT_EQ(sentence_representation(g.input(one), false).value(), Tensor({3}, {1, -2, 3}));
  const Tensor same = Tensor::from_rows({{1, 2}, {1, 2}, {1, 2}});
  EXPECT_EQ(sentence_representation(g.input(same), false).value(), Tensor({2}, {1, 2}));
  const Tensor h = Tensor::from_rows({{9, 0}, {1, 5}, {2, 4}});
  // CLS row first, then the max over every row including CLS.
  EXPECT_EQ(sentence_representation(g.input(h), true).value(), Tensor({4}, {9, 0, 9, 5}));
}

TEST(PairFeatures, Examples) {
  Graph g;
  EXPECT_EQ(pair_features(g.input(Tensor({1}, 1.0)), g.input(Tensor({1}, 3.0))).value(), Tensor({4}, {1, 3, 2, -2}));
  const Tensor r({3}, {0.5, -1, 2});
  EXPECT_EQ(pair_features(g.input(r), g.input(r)).value(), Tensor({12}, {0.5, -1, 2, 0.5, -1, 2, 0, 0, 0, 0, 0, 0}));
  Rng rng(3);
  const Tensor a = oracle::random_tensor({4}, rng), b = oracle::random_tensor({4}, rng);
  const Tensor ab = pair_features(g.input(a), g.input(b)).value();
  const Tensor ba = pair_features(g.input(b), g.input(a)).value();
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(ab[8 + i], ba[8 + i]);
    EXPECT_EQ(ab[12 + i], -ba[12 + i]);
  }
  EXPECT_THROW(pair_features(g.input(a), g.input(Tensor({3}))), DimensionError);
}

TEST(Model, EncodeShapesAndErrors) {
  const Model m(token_config());
  Graph g;
  const std::vector<std::size_t> one{4};
  EXPECT_EQ(m.encode(g, one).top.shape(), (Shape{2, 8}));
  EXPECT_EQ(m.forward(g, one).shape(), (Shape{3}));
  EXPECT_THROW(m.encode(g, std::vector<std::size_t>{}), DimensionError);
  EXPECT_THROW(m.encode(g, std::vector<std::size_t>{20}), DimensionError);
}

TEST(Model, EvalForwardIsDeterministic) {
  const Model m(token_config());
  const std::vector<std::size_t> seq{1, 5, 7, 2, 9};
  Graph g1, g2;
  EXPECT_EQ(m.encode(g1, seq).top.value(), m.encode(g2, seq).top.value());
  const Model again(token_config());
  Graph g3;
  EXPECT_EQ(again.encode(g3, seq).top.value(), m.encode(g1, seq).top.value());
}

TEST(Model, ClsRowRespondsToEveryToken) {
  ModelConfig c = token_config();
  c.scales = {ScaleSpec::fixed(3)};  // two layers of width 3 reach 2 tokens from CLS
  c.layers = 3;
  const Model m(c);
  const std::vector<std::size_t> base{1, 2, 3};
  Graph g;
  const Tensor ref = m.encode(g, base).top.value();
  for (std::size_t pos = 0; pos < base.size(); ++pos) {
    auto seq = base;
    seq[pos] = 11;
    const Tensor t = m.encode(g, seq).top.value();
    double diff = 0.0;
    for (std::size_t d = 0; d < 8; ++d) diff += std::abs(t.at(0, d) - ref.at(0, d));
    EXPECT_GT(diff, 0.0) << "position " << pos;
  }
}

TEST(Model, VanillaWithoutPositionsIsPermutationEquivariant) {
  ModelConfig c = token_config();
  c.arch = Architecture::Vanilla;
  c.use_cls = false;
  const Model m(c);
  const std::vector<std::size_t> seq{3, 1, 4, 1, 5, 9};
  const std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
  std::vector<std::size_t> permuted;
  for (auto p : perm) permuted.push_back(seq[p]);
  Graph g;
  const Tensor a = m.encode(g, seq).top.value();
  const Tensor b = m.encode(g, permuted).top.value();
  for (std::size_t i = 0; i < perm.size(); ++i)
    for (std::size_t d = 0; d < 8; ++d) EXPECT_NEAR(b.at(i, d), a.at(perm[i], d), 1e-13);
}

TEST(Model, FullWindowMultiScaleEqualsFfnFreeVanilla) {
  Rng rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    ModelConfig ms = token_config();
    ms.scales = {ScaleSpec::fixed(63)};
    ms.layers = 3;
    ms.init_seed = 10 + trial;
    ModelConfig van = ms;
    van.arch = Architecture::Vanilla;
    van.ffn = false;
    van.use_positional = false;
    van.attention_relu = true;
    Model a(ms);
    Model b(van);
    randomize(a, rng);
    copy_parameters(a, b);
    std::vector<std::size_t> seq(1 + rng.below(15));
    for (auto& t : seq) t = rng.below(20);
    Graph g;
    const Tensor ya = a.forward(g, seq).value();
    EXPECT_LE(max_abs_diff(ya, b.forward(g, seq).value()), 1e-10);
  }
}

TEST(Model, CheckpointRoundTripIsBitExact) {
  Rng rng(5);
  ModelConfig c = token_config();
  c.alpha = 0.5;
  c.dropout = 0.1;
  Model m(c);
  randomize(m, rng);
  const auto dir = (std::filesystem::temp_directory_path() / "mst_ckpt_test").string();
  std::filesystem::remove_all(dir);
  save_checkpoint(dir, m, {{"<unk>", "a", "b"}, {"neg", "pos"}});
  CheckpointExtras extras;
  const auto back = load_checkpoint(dir, &extras);
  EXPECT_EQ(extras.vocab, (std::vector<std::string>{"<unk>", "a", "b"}));
  EXPECT_EQ(extras.labels, (std::vector<std::string>{"neg", "pos"}));
  EXPECT_EQ(back->config().alpha, 0.5);
  const auto pa = m.parameters();
  const auto pb = back->parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i]->name, pb[i]->name);
    EXPECT_EQ(pa[i]->value, pb[i]->value);
  }
  std::filesystem::remove_all(dir);
  EXPECT_THROW(load_checkpoint(dir), IoError);
}

TEST(ModelConfig, ConfigRoundTripAndUnknownKeys) {
  ModelConfig c = token_config();
  c.scales = {ScaleSpec::fixed(1), ScaleSpec::ratio(8)};
  c.alpha = -0.25;
  KeyValueConfig kv;
  c.write(kv);
  ModelConfig d;
  d.read(kv);
  EXPECT_EQ(format_scales(d.scales), "1,N/8");
  EXPECT_EQ(d.alpha, -0.25);
  EXPECT_EQ(d.vocab_size, 20u);
  kv.set("model.hiden", "3");
  EXPECT_THROW(d.read(kv), ConfigError);
}
