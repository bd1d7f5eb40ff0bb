#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "support/gradcheck.hpp"
#include "tnas/adam.hpp"
#include "tnas/graph.hpp"
#include "tnas/ops.hpp"
#include "tnas/tensor.hpp"

namespace tnas {
namespace {

using nd::Graph;
using nd::Shape;
using nd::Tensor;
using testing::gradcheck;
using testing::random_off_kink;
using testing::random_tensor;

constexpr double kTol = 1e-4;

TEST(TensorTest, ShapeAndStorage) {
  Tensor t(Shape{2, 3, 4}, 1.5);
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.dim(1), 3);
  EXPECT_EQ(t.data().size(), 24u);
  EXPECT_DOUBLE_EQ(t[5], 1.5);
  EXPECT_THROW(Tensor(Shape{2, 0}), std::invalid_argument);
  EXPECT_THROW(Tensor(Shape{2, 2}, std::vector<double>{1, 2, 3}), std::invalid_argument);
}

TEST(TensorTest, HandlesAliasAndCloneCopies) {
  Tensor a(Shape{3}, 0.0);
  Tensor b = a;
  b[0] = 7.0;
  EXPECT_EQ(a[0], 7.0);
  Tensor c = a.clone();
  c[0] = 1.0;
  EXPECT_EQ(a[0], 7.0);
}

TEST(TensorTest, SerializationRoundTrip) {
  Rng rng(3);
  Tensor t = random_tensor(rng, Shape{2, 3, 1, 5});
  std::stringstream ss;
  nd::write_tensor(ss, t);
  EXPECT_EQ(ss.str().size(), 4u + 4 * 8 + 30 * 8);
  Tensor r = nd::read_tensor(ss);
  EXPECT_TRUE(nd::bit_equal(t, r));
}

TEST(ConvTest, OnesWindowCountsFour) {
  Graph g;
  Tensor x(Shape{1, 1, 2, 2}, 1.0);
  Tensor k(Shape{1, 1, 3, 3}, 1.0);
  Tensor b(Shape{1}, 0.0);
  auto y = nd::conv2d(g, x, k, b, 1);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  for (double v : y.data()) EXPECT_EQ(v, 4.0);
}

TEST(ConvTest, UnitKernelIsIdentity) {
  Rng rng(1);
  Graph g;
  Tensor x = random_tensor(rng, Shape{2, 1, 5, 3});
  Tensor k(Shape{1, 1, 1, 1}, 1.0);
  auto y = nd::conv2d(g, x, k, Tensor(Shape{1}, 0.0), 0);
  EXPECT_TRUE(nd::bit_equal(x, y));
}

TEST(ConvTest, ShapeErrorsNameTheDimension) {
  Graph g;
  Tensor x(Shape{1, 3, 4, 4});
  try {
    nd::conv2d(g, x, Tensor(Shape{2, 2, 3, 3}), Tensor(), 1);
    FAIL() << "expected rejection";
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("kernel dim 1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(nd::conv2d(g, x, Tensor(Shape{2, 3, 2, 2}), Tensor(), 0), std::invalid_argument);
  EXPECT_THROW(nd::conv2d(g, x, Tensor(Shape{2, 3, 3, 3}), Tensor(), 0), std::invalid_argument);
  EXPECT_THROW(nd::conv2d(g, x, Tensor(Shape{4, 1, 3, 3}), Tensor(), 1, 2), std::invalid_argument);
  EXPECT_THROW(nd::conv2d(g, x, Tensor(Shape{2, 3, 3, 3}), Tensor(Shape{3}), 1), std::invalid_argument);
}

TEST(ConvTest, KernelGradientMatchesFiniteDifferences) {
  Rng rng(11);
  Tensor x = random_tensor(rng, Shape{1, 2, 4, 4});
  Tensor k = random_tensor(rng, Shape{3, 2, 3, 3});
  Tensor b = random_tensor(rng, Shape{3});
  auto res = gradcheck(
      [](Graph& g, std::vector<Tensor>& in) { return nd::sum(g, nd::conv2d(g, in[0], in[1], in[2], 1)); },
      {x, k, b});
  EXPECT_LE(res.max_rel_err, kTol) << res.worst;
}

TEST(ConvTest, GroupedGradientMatchesFiniteDifferences) {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, Shape{2, 4, 3, 3});
    Tensor k = random_tensor(rng, Shape{4, 1, 3, 3});
    Tensor w = random_tensor(rng, Shape{2, 4, 3, 3});
    auto res = gradcheck(
        [&](Graph& g, std::vector<Tensor>& in) {
          return nd::sum(g, nd::mul(g, nd::conv2d(g, in[0], in[1], Tensor(), 1, 4), w));
        },
        {x, k});
    ASSERT_LE(res.max_rel_err, kTol) << res.worst;
  }
}

TEST(PixelShuffleTest, DefinitionExample) {
  Graph g;
  Tensor x(Shape{1, 4, 1, 1}, std::vector<double>{1, 2, 3, 4});
  auto y = nd::pixel_shuffle(g, x, 2);
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(PixelShuffleTest, FactorOneIsIdentityAndInverseExists) {
  Rng rng(2);
  Graph g;
  Tensor x = random_tensor(rng, Shape{1, 8, 3, 3});
  EXPECT_TRUE(nd::bit_equal(nd::pixel_shuffle(g, x, 1), x));
  auto y = nd::pixel_shuffle(g, x, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 6, 6}));
  EXPECT_TRUE(nd::bit_equal(nd::space_to_depth(y, 2), x));
  EXPECT_THROW(nd::pixel_shuffle(g, Tensor(Shape{1, 6, 2, 2}), 2), std::invalid_argument);
}

TEST(PixelShuffleTest, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  Tensor x = random_tensor(rng, Shape{1, 8, 2, 3});
  Tensor w = random_tensor(rng, Shape{1, 2, 4, 6});
  auto res = gradcheck(
      [&](Graph& g, std::vector<Tensor>& in) { return nd::sum(g, nd::mul(g, nd::pixel_shuffle(g, in[0], 2), w)); },
      {x});
  EXPECT_LE(res.max_rel_err, kTol) << res.worst;
}

TEST(ElementwiseTest, Semantics) {
  Graph g;
  Tensor x = Tensor::vector({-1.0, 0.0, 2.0});
  auto r = nd::relu(g, x);
  EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{0, 0, 2}));
  EXPECT_TRUE(nd::bit_equal(nd::add(g, x, Tensor::scalar(0.0)), x));
  auto l = nd::leaky_relu(g, x, 0.2);
  EXPECT_DOUBLE_EQ(l[0], -0.2);
  EXPECT_EQ(l[1], 0.0);
  EXPECT_THROW(nd::add(g, x, Tensor::vector({1.0, 2.0})), std::invalid_argument);
}

TEST(ElementwiseTest, LeakyReluSlopeAtZero) {
  Graph g;
  Tensor x = Tensor::vector({0.0, 1.0});
  x.set_requires_grad(true);
  auto loss = nd::sum(g, nd::leaky_relu(g, x, 0.2));
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 0.2);
  EXPECT_DOUBLE_EQ(x.grad()[1], 1.0);
}

TEST(ElementwiseTest, SquareGradientIsTwoX) {
  Rng rng(5);
  Tensor x = random_tensor(rng, Shape{7});
  x.set_requires_grad(true);
  Graph g;
  auto loss = nd::sum(g, nd::square(g, x));
  g.backward(loss);
  for (std::int64_t i = 0; i < 7; ++i) EXPECT_DOUBLE_EQ(x.grad()[static_cast<std::size_t>(i)], 2.0 * x[i]);
}

TEST(ElementwiseTest, GradientsMatchFiniteDifferences) {
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor a = random_off_kink(rng, Shape{2, 3});
    Tensor b = random_off_kink(rng, Shape{2, 3});
    Tensor s = random_off_kink(rng, Shape{1});
    auto res = gradcheck(
        [](Graph& g, std::vector<Tensor>& in) {
          auto t = nd::add(g, nd::mul(g, in[0], in[1]), nd::sub(g, in[1], in[2]));
          t = nd::add(g, nd::relu(g, t), nd::leaky_relu(g, nd::scale(g, in[0], -1.5), 0.2));
          t = nd::add(g, nd::square(g, t), nd::abs(g, nd::add_scalar(g, in[1], 0.0)));
          t = nd::mul(g, t, in[2]);
          return nd::add(g, nd::mean(g, t), nd::dot(g, in[0], in[1]));
        },
        {a, b, s});
    ASSERT_LE(res.max_rel_err, kTol) << res.worst;
  }
}

TEST(ElementwiseTest, SliceAndPadGradients) {
  Rng rng(7);
  Tensor a = random_tensor(rng, Shape{1, 5, 2, 2});
  Tensor w = random_tensor(rng, Shape{1, 7, 2, 2});
  auto res = gradcheck(
      [&](Graph& g, std::vector<Tensor>& in) {
        auto n = nd::narrow(g, in[0], 1, 3);
        auto p = nd::pad_zeros(g, n, 1, 7);
        auto s = nd::stack(g, {nd::select(g, in[0], 3), nd::select(g, in[0], 9)});
        return nd::add(g, nd::sum(g, nd::mul(g, p, w)), nd::sum(g, nd::square(g, s)));
      },
      {a});
  EXPECT_LE(res.max_rel_err, kTol) << res.worst;
}

TEST(ElementwiseTest, GradScaleAndConstantGradient) {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Graph g;
  auto y = nd::sum(g, nd::grad_scale(g, x, 3.0));
  auto c = nd::constant_gradient(g, x, 5.0, {-1.0, 1.0});
  auto loss = nd::add(g, y, c);
  EXPECT_DOUBLE_EQ(loss.item(), 8.0);
  g.backward(loss);
  EXPECT_DOUBLE_EQ(x.grad()[0], 2.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 4.0);
}

TEST(BackwardTest, ConstantLossLeavesGradientsZero) {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Graph g;
  Tensor c = Tensor::scalar(3.0);
  g.backward(c);
  EXPECT_FALSE(x.has_grad());
}

TEST(BackwardTest, SumGivesOnes) {
  Tensor x(Shape{2, 2}, 0.3);
  x.set_requires_grad(true);
  Graph g;
  auto loss = nd::sum(g, x);
  g.backward(loss);
  for (double v : x.grad()) EXPECT_EQ(v, 1.0);
}

TEST(BackwardTest, RejectsNonScalarAndSecondCall) {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Graph g;
  auto y = nd::scale(g, x, 2.0);
  EXPECT_THROW(g.backward(y), std::invalid_argument);
  Graph g2;
  auto loss = nd::sum(g2, x);
  g2.backward(loss);
  EXPECT_THROW(g2.backward(loss), std::logic_error);
}

TEST(BackwardTest, ComposedConvReluSum) {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = random_tensor(rng, Shape{1, 2, 4, 4});
    Tensor k = random_tensor(rng, Shape{2, 2, 3, 3});
    Tensor b = random_tensor(rng, Shape{2});
    auto res = gradcheck(
        [](Graph& g, std::vector<Tensor>& in) {
          return nd::sum(g, nd::relu(g, nd::conv2d(g, in[0], in[1], in[2], 1)));
        },
        {x, k, b});
    // A relu kink inside the difference stencil would be an invalid test point.
    if (res.max_rel_err > kTol) {
      Graph g(Graph::Mode::kInference);
      auto pre = nd::conv2d(g, x, k, b, 1);
      double nearest = 1.0;
      for (double v : pre.data()) nearest = std::min(nearest, std::abs(v));
      ASSERT_LT(nearest, 1e-5) << res.worst;
    }
  }
}

TEST(BackwardTest, InferenceModeRecordsNothing) {
  Tensor x = Tensor::vector({1.0, 2.0});
  x.set_requires_grad(true);
  Graph g(Graph::Mode::kInference);
  auto y = nd::sum(g, nd::square(g, x));
  EXPECT_EQ(g.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

TEST(BackwardTest, ForwardIsBitReproducible) {
  Rng r1(9), r2(9);
  Tensor x1 = random_tensor(r1, Shape{1, 3, 6, 6}), k1 = random_tensor(r1, Shape{4, 3, 3, 3});
  Tensor x2 = random_tensor(r2, Shape{1, 3, 6, 6}), k2 = random_tensor(r2, Shape{4, 3, 3, 3});
  Graph g;
  EXPECT_TRUE(nd::bit_equal(nd::conv2d(g, x1, k1, Tensor(), 1), nd::conv2d(g, x2, k2, Tensor(), 1)));
}

TEST(AdamTest, ZeroGradientKeepsParamsAndDecaysMoments) {
  nd::AdamMoments st{{0.5}, {0.25}};
  std::vector<double> p{1.0};
  nd::AdamConfig cfg;
  nd::adam_step(p, std::vector<double>{0.0}, st, 1, cfg);
  EXPECT_DOUBLE_EQ(p[0], 1.0 - cfg.lr * (0.45 / 0.1) / (std::sqrt(0.24975 / 0.001) + cfg.eps));
  EXPECT_DOUBLE_EQ(st.m[0], 0.45);
  EXPECT_DOUBLE_EQ(st.v[0], 0.24975);
  nd::AdamMoments zero{{0.0}, {0.0}};
  std::vector<double> q{1.0};
  nd::adam_step(q, std::vector<double>{0.0}, zero, 1, cfg);
  EXPECT_EQ(q[0], 1.0);
}

TEST(AdamTest, FirstStepMagnitudeIsLr) {
  nd::AdamMoments st{{0.0}, {0.0}};
  std::vector<double> p{2.0};
  nd::AdamConfig cfg;
  cfg.lr = 0.01;
  nd::adam_step(p, std::vector<double>{3.7}, st, 1, cfg);
  // mhat = g, vhat = g^2, so the step is lr * g / (|g| + eps).
  EXPECT_NEAR(2.0 - p[0], 0.01 * 3.7 / (3.7 + 1e-8), 1e-15);
}

TEST(AdamTest, QuadraticBowlConverges) {
  Tensor x = Tensor::vector({1.0});
  x.set_requires_grad(true);
  nd::AdamConfig cfg;
  cfg.lr = 0.1;
  nd::Adam opt({x}, cfg);
  for (int i = 0; i < 200; ++i) {
    opt.zero_grad();
    Graph g;
    auto loss = nd::sum(g, nd::square(g, x));
    g.backward(loss);
    opt.step();
  }
  EXPECT_LT(std::abs(x[0]), 1e-3);
}

TEST(AdamTest, ShapeMismatchRejected) {
  nd::AdamMoments st{{0.0, 0.0}, {0.0, 0.0}};
  std::vector<double> p{1.0};
  EXPECT_THROW(nd::adam_step(p, std::vector<double>{1.0}, st, 1, {}), std::invalid_argument);
}

}  // namespace
}  // namespace tnas
