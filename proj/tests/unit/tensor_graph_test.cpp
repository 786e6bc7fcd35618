#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

#include "mst/error.hpp"
#include "mst/gradcheck.hpp"
#include "mst/graph.hpp"
#include "oracles.hpp"

using namespace mst;

TEST(Tensor, ShapeMustMatchData) {
  EXPECT_THROW(Tensor({2, 3}, std::vector<double>(5)), DimensionError);
  const Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  EXPECT_EQ(t.at(1, 2), 6.0);
}

TEST(Tensor, SerializationRoundTripIsBitExact) {
  Rng rng(3);
  Tensor t = oracle::random_tensor({3, 4, 2}, rng, -1e6, 1e6);
  t[0] = -0.0;
  t[1] = std::numeric_limits<double>::denorm_min();
  std::stringstream ss;
  write_tensor(ss, t);
  const Tensor back = read_tensor(ss);
  ASSERT_EQ(back.shape(), t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(std::signbit(back[i]), std::signbit(t[i]));
  EXPECT_EQ(back, t);
}

TEST(Matmul, IdentityAndHandSum) {
  Graph g;
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(matmul(g.input(Tensor::identity(2)), g.input(m)).value(), m);
  const Var c = matmul(g.input(m), g.input(Tensor::from_rows({{1}, {1}})));
  EXPECT_EQ(c.value(), Tensor::from_rows({{3}, {7}}));
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Graph g;
  try {
    matmul(g.input(Tensor::matrix(2, 3)), g.input(Tensor::matrix(4, 5)));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("4x5"), std::string::npos) << msg;
  }
}

TEST(Matmul, ForwardMatchesLoopOracle) {
  Rng rng(11);
  const Tensor a = oracle::random_tensor({7, 5}, rng);
  const Tensor b = oracle::random_tensor({5, 9}, rng);
  Graph g;
  const auto got = oracle::to_mat(matmul(g.input(a), g.input(b)).value());
  EXPECT_LE(oracle::max_abs_diff(got, oracle::matmul(oracle::to_mat(a), oracle::to_mat(b))), 1e-14);
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
  Rng rng(5);
  const Tensor a = oracle::random_tensor({5, 4}, rng);
  const Tensor b = oracle::random_tensor({4, 3}, rng);
  const Tensor w = oracle::random_tensor({5, 3}, rng);
  // f(A) = sum(w * (A B)), differentiated by hand-rolled central differences.
  const auto f = [&](const std::vector<double>& flat) {
    const auto c = oracle::matmul(oracle::to_mat(Tensor({5, 4}, flat)), oracle::to_mat(b));
    double s = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t j = 0; j < 3; ++j) s += w.at(i, j) * c[i][j];
    return s;
  };
  Graph g;
  const Var va = g.input(a, true);
  const Var vb = g.input(b, true);
  g.backward(sum(mul(matmul(va, vb), g.input(w))));
  const auto num = oracle::numeric_gradient(f, a.values());
  for (std::size_t i = 0; i < num.size(); ++i) {
    const double rel = std::abs(va.grad()[i] - num[i]) / std::max({1.0, std::abs(num[i])});
    EXPECT_LE(rel, 1e-6);
  }
  // dB = A^T dC with dC = w.
  Tensor at = Tensor::matrix(4, 5);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) at.at(j, i) = a.at(i, j);
  const auto db = oracle::matmul(oracle::to_mat(at), oracle::to_mat(w));
  EXPECT_LE(oracle::max_abs_diff(oracle::to_mat(vb.grad()), db), 1e-12);
}

TEST(Softmax, Examples) {
  Graph g;
  const auto s1 = softmax_rows(g.input(Tensor({4}, {1, 1, 1, 1}))).value();
  for (double v : s1.values()) EXPECT_DOUBLE_EQ(v, 0.25);
  const auto s2 = softmax_rows(g.input(Tensor({2}, {0, std::log(2.0)}))).value();
  EXPECT_NEAR(s2[0], 1.0 / 3, 1e-15);
  EXPECT_NEAR(s2[1], 2.0 / 3, 1e-15);
  const auto s3 = softmax_rows(g.input(Tensor({3}, {0, -1e9, 0}))).value();
  EXPECT_NEAR(s3[0], 0.5, 1e-12);
  EXPECT_NEAR(s3[1], 0.0, 1e-12);
  EXPECT_NEAR(s3[2], 0.5, 1e-12);
}

TEST(Softmax, RowsSumToOneAndMatchOracle) {
  Rng rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor x = oracle::random_tensor({6, 1 + rng.below(12)}, rng, -30, 30);
    Graph g;
    const Tensor y = softmax_rows(g.input(x)).value();
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto expect = oracle::softmax({x.row(r).begin(), x.row(r).end()});
      double s = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        s += y.at(r, c);
        EXPECT_NEAR(y.at(r, c), expect[c], 1e-15);
      }
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Softmax, NanPropagates) {
  Graph g;
  const auto y = softmax_rows(g.input(Tensor({3}, {0.0, std::nan(""), 1.0}))).value();
  for (double v : y.values()) EXPECT_TRUE(std::isnan(v));
}

TEST(LayerNorm, Examples) {
  Graph g;
  const Var one = g.input(Tensor({2}, 1.0));
  const Var zero = g.input(Tensor({2}, 0.0));
  const auto c = layer_norm(g.input(Tensor({2}, {3.0, 3.0})), one, zero).value();
  EXPECT_EQ(c[0], 0.0);
  EXPECT_EQ(c[1], 0.0);
  const auto n = layer_norm(g.input(Tensor({2}, {1.0, -1.0})), one, zero, 1e-15).value();
  EXPECT_NEAR(n[0], 1.0, 1e-12);
  EXPECT_NEAR(n[1], -1.0, 1e-12);
}

TEST(LayerNorm, RandomRowsMatchFormula) {
  Rng rng(4);
  const Tensor x = oracle::random_tensor({5, 8}, rng, -3, 3);
  const Tensor gain = oracle::random_tensor({8}, rng, 0.5, 1.5);
  const Tensor bias = oracle::random_tensor({8}, rng);
  Graph g;
  const Tensor y = layer_norm(g.input(x), g.input(gain), g.input(bias)).value();
  const Tensor plain = layer_norm(g.input(x), g.input(Tensor({8}, 1.0)), g.input(Tensor({8}, 0.0))).value();
  for (std::size_t r = 0; r < 5; ++r) {
    const auto expect = oracle::layer_norm({x.row(r).begin(), x.row(r).end()}, gain.values(), bias.values(), 1e-5);
    for (std::size_t c = 0; c < 8; ++c) EXPECT_NEAR(y.at(r, c), expect[c], 1e-13);
    double mean = 0.0, var = 0.0;
    for (double v : plain.row(r)) mean += v;
    mean /= 8;
    for (double v : plain.row(r)) var += (v - mean) * (v - mean);
    var /= 8;
    EXPECT_LE(std::abs(mean), 1e-12);
    // Population variance of the normalized row is var/(var+eps) < 1.
    double raw_mean = 0.0, raw_var = 0.0;
    for (double v : x.row(r)) raw_mean += v;
    raw_mean /= 8;
    for (double v : x.row(r)) raw_var += (v - raw_mean) * (v - raw_mean);
    raw_var /= 8;
    EXPECT_NEAR(var, raw_var / (raw_var + 1e-5), 1e-12);
  }
}

TEST(ElementwiseOps, Examples) {
  Graph g;
  EXPECT_EQ(relu(g.input(Tensor({3}, {-1, 0, 2}))).value(), Tensor({3}, {0, 0, 2}));
  const Tensor row = Tensor::from_rows({{1, -2, 3}});
  EXPECT_EQ(max_over_positions(g.input(row)).value(), Tensor({3}, {1, -2, 3}));
  Rng rng(1);
  const Tensor x = Tensor::from_rows({{1, 2}, {3, 4}});
  EXPECT_EQ(dropout(g.input(x), 0.0, true, rng).value(), x);
  EXPECT_EQ(dropout(g.input(x), 0.7, false, rng).value(), x);
  EXPECT_THROW(dropout(g.input(x), 1.0, true, rng), ConfigError);
  EXPECT_THROW(dropout(g.input(x), -0.1, true, rng), ConfigError);
}

TEST(ElementwiseOps, DropoutIsInverted) {
  Graph g;
  Rng rng(2);
  const Tensor x({20000}, 1.0);
  const Tensor y = dropout(g.input(x), 0.25, true, rng).value();
  double s = 0.0;
  for (double v : y.values()) {
    EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.75) < 1e-15);
    s += v;
  }
  EXPECT_NEAR(s / 20000, 1.0, 0.03);
}

TEST(ElementwiseOps, AddConcatSliceAreExact) {
  Rng rng(6);
  const Tensor a = oracle::random_tensor({3, 4}, rng);
  const Tensor b = oracle::random_tensor({3, 2}, rng);
  const Tensor v = oracle::random_tensor({4}, rng);
  Graph g;
  const Var va = g.input(a);
  const Var vb = g.input(b);
  const Tensor s = add(va, g.input(v)).value();
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(s.at(r, c), a.at(r, c) + v[c]);
  const std::vector<Var> parts{va, vb};
  const Tensor cat = concat_last(parts).value();
  for (std::size_t r = 0; r < 3; ++r) {
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(cat.at(r, c), a.at(r, c));
    for (std::size_t c = 0; c < 2; ++c) EXPECT_EQ(cat.at(r, 4 + c), b.at(r, c));
  }
  const Tensor sl = slice_rows(va, 1, 3).value();
  EXPECT_EQ(sl.shape(), (Shape{2, 4}));
  for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(sl.at(0, c), a.at(1, c));
  const std::vector<Var> bad{va, g.input(Tensor::matrix(2, 2))};
  EXPECT_THROW(concat_last(bad), DimensionError);
}

TEST(MaxPool, TiesRouteGradientToLowestRow) {
  Graph g;
  const Var x = g.input(Tensor::from_rows({{1, 5}, {1, 2}, {0, 5}}), true);
  g.backward(sum(max_over_positions(x)));
  EXPECT_EQ(x.grad(), Tensor::from_rows({{1, 1}, {0, 0}, {0, 0}}));
}

TEST(Graph, ReusedNodeAccumulatesGradient) {
  Rng rng(8);
  const Tensor a = oracle::random_tensor({3, 3}, rng);
  const Tensor w = oracle::random_tensor({3, 3}, rng);
  Graph g1;
  const Var x1 = g1.input(a, true);
  g1.backward(sum(mul(relu(x1), g1.input(w))));
  Graph g2;
  const Var x2 = g2.input(a, true);
  const Var once = sum(mul(relu(x2), g2.input(w)));
  g2.backward(add(once, once));
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(x2.grad()[i], 2.0 * x1.grad()[i]);
}

TEST(Graph, LeafGradientsAddAcrossBackwardPasses) {
  Graph g;
  const Var x = g.input(Tensor({2}, {1.0, 2.0}), true);
  const Var y = sum(mul(x, x));
  g.backward(y);
  g.backward(y);
  EXPECT_EQ(x.grad(), Tensor({2}, {4.0, 8.0}));
}

TEST(Losses, Examples) {
  Graph g;
  const Tensor p({2}, {0.3, -0.2});
  EXPECT_EQ(mse_loss(g.input(p), g.input(p)).value()[0], 0.0);
  EXPECT_EQ(mse_loss(g.input(Tensor({2}, 0.0)), g.input(Tensor({2}, 1.0))).value()[0], 1.0);
  EXPECT_NEAR(cross_entropy(g.input(Tensor({5}, 0.7)), 3).value()[0], std::log(5.0), 1e-15);
  EXPECT_THROW(cross_entropy(g.input(Tensor({5}, 0.0)), 5), std::exception);
}

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(12);
  const Tensor w = oracle::random_tensor({4, 3}, rng);
  const ScalarFn f = [&](Graph& g, std::span<const Var> x) { return sum(mul(x[0], g.input(w))); };
  EXPECT_LE(grad_check(f, {oracle::random_tensor({4, 3}, rng)}).max_rel_error, 1e-10);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // A deliberately broken op: forward x^2, backward claims 3x.
  const ScalarFn f = [](Graph& g, std::span<const Var> x) {
    Tensor v = x[0].value();
    for (double& e : v.values()) e *= e;
    const std::size_t id = x[0].id();
    Var y = g.record(std::move(v), {id}, [](Graph& gr, std::size_t self) {
      const std::size_t in = gr.input_id(self, 0);
      Tensor& gin = gr.grad(in);
      const Tensor& gout = gr.grad_or_zero(self);
      for (std::size_t i = 0; i < gin.size(); ++i) gin[i] += 3.0 * gr.value(in)[i] * gout[i];
    });
    return sum(y);
  };
  EXPECT_GT(grad_check(f, {Tensor({3}, {0.5, 1.0, -2.0})}).max_rel_error, 0.1);
}

TEST(GradCheck, NonScalarOutputIsRejected) {
  const ScalarFn f = [](Graph&, std::span<const Var> x) { return x[0]; };
  EXPECT_THROW(grad_check(f, {Tensor({3}, 1.0)}), DimensionError);
}

TEST(GradCheck, SoftmaxMatmulChain) {
  Rng rng(13);
  const Tensor w = oracle::random_tensor({4, 6}, rng);
  const ScalarFn f = [&](Graph& g, std::span<const Var> x) {
    return sum(mul(softmax_rows(matmul(x[0], x[1])), g.input(w)));
  };
  EXPECT_LE(grad_check(f, {oracle::random_tensor({4, 5}, rng), oracle::random_tensor({5, 6}, rng)}).max_rel_error,
            1e-6);
}

TEST(GradCheck, RegisteredSuitePasses) {
  for (const auto& c : gradcheck_suite()) {
    const auto r = c.run();
    EXPECT_LE(r.max_rel_error, c.tolerance) << c.name;
  }
}
