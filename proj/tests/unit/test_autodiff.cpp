#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "amcl/autodiff.hpp"
#include "amcl/errors.hpp"
#include "common/oracles.hpp"

namespace amcl {
namespace {

using testing::graph_gradient_error;
using testing::random_tensor;

constexpr double kGradTol = 1e-4;

// Reduces any output to a scalar with fixed random weights so every output
// entry contributes a distinct sensitivity.
Var project(Graph& g, Var y, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  return ops::weighted_sum(g, y, random_tensor(g.value(y).shape(), rng));
}

TEST(Tensor, ZeroExtentIsRejected) { EXPECT_THROW(Tensor({2, 0}), ConfigError); }

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r[5], 6.0);
  EXPECT_THROW(t.reshaped({4, 2}), ConfigError);
}

TEST(Tensor, GradSlotLifecycle) {
  Tensor t({2});
  EXPECT_FALSE(t.has_grad());
  EXPECT_THROW(t.grad(), StateError);
  t.enable_grad();
  t.grad()[0] = 3.0;
  t.zero_grad();
  EXPECT_EQ(t.grad()[0], 0.0);
}

TEST(Tensor, RequireFiniteNamesContext) {
  Tensor t({2}, {1.0, std::nan("")});
  EXPECT_FALSE(t.all_finite());
  try {
    t.require_finite("probe");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("probe"), std::string::npos);
  }
}

TEST(Tensor, ChecksumIsBitExact) {
  Tensor a({2}, {1.0, 2.0});
  Tensor b({2}, {1.0, 2.0});
  Tensor c({2}, {1.0, std::nextafter(2.0, 3.0)});
  EXPECT_EQ(a.checksum(), b.checksum());
  EXPECT_NE(a.checksum(), c.checksum());
  EXPECT_NE(a.checksum(), a.reshaped({1, 2}).checksum());
}

TEST(Graph, StaleAndForeignVarsAreRejected) {
  Graph g, other;
  Var v = g.input(Tensor::from({1.0}));
  EXPECT_THROW(other.value(v), StateError);
  g.clear();
  EXPECT_THROW(g.value(v), StateError);
}

TEST(Graph, BackwardNeedsScalar) {
  Graph g;
  Var v = g.input(Tensor::from({1.0, 2.0}), true);
  EXPECT_THROW(g.backward(v), ConfigError);
}

TEST(Graph, ParameterGradientsAccumulateAcrossBackwardCalls) {
  Tensor w = Tensor::from({2.0});
  for (int pass = 0; pass < 2; ++pass) {
    Graph g;
    g.backward(ops::mul(g, g.parameter(w), g.input(Tensor::from({3.0}))));
  }
  EXPECT_DOUBLE_EQ(w.grad()[0], 6.0);
}

TEST(Graph, NodeGradientsAreRecomputed) {
  Graph g;
  Var x = g.input(Tensor::from({1.5}), true);
  Var y = ops::scale(g, x, 4.0);
  g.backward(y);
  g.backward(y);
  EXPECT_DOUBLE_EQ(g.grad(x)[0], 4.0);
}

TEST(Graph, ConstantInputsHaveNoGradient) {
  Graph g;
  Var x = g.input(Tensor::from({1.0}));
  Var y = g.input(Tensor::from({2.0}), true);
  g.backward(ops::mul(g, x, y));
  EXPECT_TRUE(g.grad(x).empty());
  EXPECT_DOUBLE_EQ(g.grad(y)[0], 1.0);
}

TEST(Ops, ForwardRejectsNonFiniteInput) {
  Graph g;
  Var x = g.input(Tensor::from({1.0, INFINITY}));
  EXPECT_THROW(ops::relu(g, x), NumericError);
}

TEST(Ops, DenseMatchesHandComputation) {
  Graph g;
  Var x = g.input(Tensor({1, 2}, {1.0, 2.0}));
  Var w = g.input(Tensor({2, 2}, {1.0, 0.0, 0.5, -1.0}));
  Var b = g.input(Tensor::from({0.25, 0.0}));
  const Tensor& y = g.value(ops::dense(g, x, w, b));
  EXPECT_DOUBLE_EQ(y[0], 1.25);
  EXPECT_DOUBLE_EQ(y[1], -1.5);
}

TEST(Ops, Conv2dMatchesDirectSum) {
  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({2, 2, 5, 4}, rng);
  const Tensor w = random_tensor({3, 2, 3, 3}, rng);
  const Tensor b = random_tensor({3}, rng);
  Graph g;
  const Tensor& y = g.value(ops::conv2d(g, g.input(x), g.input(w), g.input(b)));
  ASSERT_EQ(y.shape(), (Shape{2, 3, 5, 4}));
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t o = 0; o < 3; ++o)
      for (int r = 0; r < 5; ++r)
        for (int c = 0; c < 4; ++c) {
          double s = b[o];
          for (std::size_t i = 0; i < 2; ++i)
            for (int ky = 0; ky < 3; ++ky)
              for (int kx = 0; kx < 3; ++kx) {
                const int sy = r + ky - 1, sx = c + kx - 1;
                if (sy < 0 || sy >= 5 || sx < 0 || sx >= 4) continue;
                s += w[((o * 2 + i) * 3 + ky) * 3 + kx] * x[((n * 2 + i) * 5 + sy) * 4 + sx];
              }
          EXPECT_NEAR(y[((n * 3 + o) * 5 + r) * 4 + c], s, 1e-12);
        }
}

TEST(Ops, Conv2dRejectsUnsupportedGeometry) {
  Graph g;
  Var x = g.input(Tensor({1, 1, 4, 4}));
  Var w = g.input(Tensor({1, 1, 2, 2}));
  Var b = g.input(Tensor({1}));
  EXPECT_THROW(ops::conv2d(g, x, w, b), ConfigError);
  Var w3 = g.input(Tensor({1, 1, 3, 3}));
  EXPECT_THROW(ops::conv2d(g, x, w3, b, 2), ConfigError);
  EXPECT_THROW(ops::conv2d(g, x, w3, b, 1, 0), ConfigError);
}

TEST(Ops, SoftmaxIsShiftInvariantAndStable) {
  Graph g;
  const Tensor& p = g.value(ops::softmax(g, g.input(Tensor({1, 2}, {1000.0, 1000.0})), 1));
  EXPECT_DOUBLE_EQ(p[0], 0.5);
  EXPECT_DOUBLE_EQ(p[1], 0.5);
}

TEST(Ops, SoftmaxCrossEntropyClampsAtFloor) {
  Graph g;
  Var z = g.input(Tensor({1, 2}, {0.0, 200.0}), true);
  Var loss = ops::softmax_cross_entropy(g, z, Tensor({1, 2}, {1.0, 0.0}));
  EXPECT_DOUBLE_EQ(g.value(loss)[0], -std::log(kProbabilityFloor));
  g.backward(loss);
  EXPECT_EQ(g.grad(z)[0], 0.0);
  EXPECT_EQ(g.grad(z)[1], 0.0);
}

TEST(Ops, MaxPoolPicksWindowMaximum) {
  Graph g;
  Tensor x({1, 1, 2, 4}, {1, 5, 2, 0, 3, 4, 8, 7});
  const Tensor& y = g.value(ops::maxpool2x2(g, g.input(x)));
  EXPECT_EQ(y.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(y[0], 5.0);
  EXPECT_EQ(y[1], 8.0);
}

TEST(Ops, SelectRowsGathersPerRowSources) {
  Graph g;
  Var a = g.input(Tensor({2, 2}, {1, 2, 3, 4}));
  Var b = g.input(Tensor({2, 2}, {5, 6, 7, 8}));
  const std::vector<Var> src{a, b};
  const std::vector<std::size_t> rows{1, 0};
  const Tensor& y = g.value(ops::select_rows(g, src, rows));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{5, 6, 3, 4}));
}

// Finite-difference checks, one per differentiable op.

TEST(Gradients, Dense) {
  std::mt19937_64 rng(2);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::dense(g, v[0], v[1], v[2])); },
                                 {random_tensor({3, 4}, rng), random_tensor({2, 4}, rng), random_tensor({2}, rng)}),
            kGradTol);
}

TEST(Gradients, Conv2d) {
  std::mt19937_64 rng(3);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::conv2d(g, v[0], v[1], v[2])); },
                                 {random_tensor({2, 2, 4, 4}, rng), random_tensor({3, 2, 3, 3}, rng),
                                  random_tensor({3}, rng)}),
            kGradTol);
}

TEST(Gradients, Relu) {
  std::mt19937_64 rng(4);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::relu(g, v[0])); },
                                 {random_tensor({4, 5}, rng)}),
            kGradTol);
}

TEST(Gradients, Sigmoid) {
  std::mt19937_64 rng(5);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::sigmoid(g, v[0])); },
                                 {random_tensor({3, 3}, rng, -3, 3)}),
            kGradTol);
}

TEST(Gradients, MaxPool) {
  std::mt19937_64 rng(6);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::maxpool2x2(g, v[0])); },
                                 {random_tensor({2, 2, 4, 6}, rng)}),
            kGradTol);
}

TEST(Gradients, SoftmaxBothAxes) {
  std::mt19937_64 rng(7);
  for (std::size_t axis : {0u, 1u})
    EXPECT_LE(graph_gradient_error(
                  [axis](Graph& g, const std::vector<Var>& v) { return project(g, ops::softmax(g, v[0], axis)); },
                  {random_tensor({3, 4}, rng, -2, 2)}),
              kGradTol);
}

TEST(Gradients, SoftmaxCrossEntropy) {
  std::mt19937_64 rng(8);
  const Tensor weights = random_tensor({4, 3}, rng, 0, 2);
  EXPECT_LE(graph_gradient_error(
                [&](Graph& g, const std::vector<Var>& v) { return ops::softmax_cross_entropy(g, v[0], weights); },
                {random_tensor({4, 3}, rng, -2, 2)}),
            kGradTol);
}

TEST(Gradients, NegLogClamped) {
  std::mt19937_64 rng(9);
  EXPECT_LE(graph_gradient_error([](Graph& g, const std::vector<Var>& v) { return project(g, ops::neg_log_clamped(g, v[0])); },
                                 {random_tensor({5}, rng, 0.1, 1.0)}),
            kGradTol);
}

TEST(Gradients, ArithmeticAndReductions) {
  std::mt19937_64 rng(10);
  const std::vector<Tensor> in{random_tensor({2, 3}, rng), random_tensor({2, 3}, rng)};
  EXPECT_LE(graph_gradient_error(
                [](Graph& g, const std::vector<Var>& v) {
                  return ops::sum(g, ops::mul(g, ops::add(g, v[0], ops::scale(g, v[1], -1.5)), v[1]));
                },
                in),
            kGradTol);
}

TEST(Gradients, ConcatFlattenPoolAndGate) {
  std::mt19937_64 rng(11);
  const std::vector<Tensor> in{random_tensor({2, 2, 2, 2}, rng), random_tensor({2, 1, 2, 2}, rng),
                               random_tensor({2, 3}, rng)};
  EXPECT_LE(graph_gradient_error(
                [](Graph& g, const std::vector<Var>& v) {
                  const std::vector<Var> parts{v[0], v[1]};
                  Var cat = ops::concat(g, parts, 1);
                  Var gated = ops::channel_scale(g, cat, ops::sigmoid(g, v[2]));
                  return ops::add(g, project(g, ops::flatten(g, gated), 1), project(g, ops::global_avg_pool(g, cat), 2));
                },
                in),
            kGradTol);
}

TEST(Gradients, SelectRows) {
  std::mt19937_64 rng(12);
  const std::vector<std::size_t> rows{1, 0, 1};
  EXPECT_LE(graph_gradient_error(
                [&](Graph& g, const std::vector<Var>& v) {
                  const std::vector<Var> src{v[0], v[1]};
                  return project(g, ops::select_rows(g, src, rows));
                },
                {random_tensor({3, 2}, rng), random_tensor({3, 2}, rng)}),
            kGradTol);
}

}  // namespace
}  // namespace amcl
