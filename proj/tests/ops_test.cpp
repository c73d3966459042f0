#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "cvnet/error.hpp"
#include "cvnet/ops.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cvnet;

namespace {

ConvKernel<double> kernel(Shape wshape, std::uint64_t seed, bool with_bias = true) {
  ConvKernel<double> k;
  k.weight = parameter(fixture::random_tensor(wshape, seed, -0.5, 0.5));
  const std::size_t bias_len = wshape[0];
  if (with_bias) k.bias = parameter(fixture::random_tensor({bias_len}, seed + 1000, -0.2, 0.2));
  return k;
}

double inner(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-12}); }

}  // namespace

// --- conv3d ---------------------------------------------------------------

TEST(Conv3d, IdentityKernel) {
  auto x = constant(fixture::random_tensor({1, 1, 3, 4, 5}, 1));
  ConvKernel<double> k{parameter(Tensor<double>({1, 1, 1, 1, 1}, 1.0)), parameter(Tensor<double>({1}, 0.0))};
  auto y = conv3d(x, k, {1, 1, 1}, {0, 0, 0});
  EXPECT_EQ(y->value.shape, x->value.shape);
  EXPECT_EQ(y->value.data, x->value.data);
}

TEST(Conv3d, OnesSumTo27) {
  auto x = constant(Tensor<double>({1, 1, 3, 3, 3}, 1.0));
  ConvKernel<double> k{parameter(Tensor<double>({1, 1, 3, 3, 3}, 1.0)), parameter(Tensor<double>({1}, 0.0))};
  auto y = conv3d(x, k, {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y->value.shape, (Shape{1, 1, 1, 1, 1}));
  EXPECT_EQ(y->value.data[0], 27.0);
}

TEST(Conv3d, MatchesNestedLoopOracle) {
  const auto x = fixture::random_tensor({1, 2, 5, 5, 5}, 2);
  const auto k = kernel({3, 2, 3, 3, 3}, 3);
  auto y = conv3d(constant(x), k, {1, 1, 1}, {0, 0, 0});
  const auto ref = oracle::conv3d(x, k.weight->value, k.bias->value.data, {1, 1, 1}, {0, 0, 0});
  ASSERT_EQ(y->value.shape, ref.shape);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(rel_diff(y->value.data[i], ref.data[i]), 1e-5);
}

TEST(Conv3d, StridedPaddedMatchesOracle) {
  const auto x = fixture::random_tensor({2, 3, 6, 5, 7}, 4);
  const auto k = kernel({2, 3, 3, 3, 3}, 5);
  auto y = conv3d(constant(x), k, {2, 1, 2}, {1, 1, 0});
  const auto ref = oracle::conv3d(x, k.weight->value, k.bias->value.data, {2, 1, 2}, {1, 1, 0});
  ASSERT_EQ(y->value.shape, ref.shape);
  EXPECT_EQ(y->value.shape, (Shape{2, 2, 3, 5, 3}));
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_LE(rel_diff(y->value.data[i], ref.data[i]), 1e-5);
}

TEST(Conv3d, RejectsChannelMismatch) {
  auto x = constant(Tensor<double>({1, 3, 4, 4, 4}));
  const auto k = kernel({2, 2, 3, 3, 3}, 6);
  try {
    conv3d(x, k, {1, 1, 1}, {1, 1, 1});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos) << e.what();
  }
}

TEST(Conv3d, RejectsKernelLargerThanPaddedInput) {
  auto x = constant(Tensor<double>({1, 1, 2, 4, 4}));
  const auto k = kernel({1, 1, 3, 3, 3}, 7);
  try {
    conv3d(x, k, {1, 1, 1}, {0, 0, 0});
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("depth"), std::string::npos) << e.what();
  }
}

TEST(Conv3d, GradientsMatchFiniteDifferences) {
  auto x = parameter(fixture::random_tensor({1, 2, 4, 5, 3}, 8));
  const auto k = kernel({3, 2, 3, 3, 3}, 9);
  const auto w = fixture::random_tensor({1, 3, 2, 3, 2}, 10);
  auto loss = [&] { return sum(mul(conv3d(x, k, {2, 2, 2}, {1, 1, 1}), constant(w))); };
  const auto r = oracle::gradient_check(loss, {{"x", x}, {"w", k.weight}, {"b", k.bias}});
  EXPECT_GT(r.checked, 50u);
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

// --- conv3d_transpose -----------------------------------------------------

TEST(Conv3dTranspose, IdentityKernel) {
  auto x = constant(fixture::random_tensor({1, 1, 2, 3, 2}, 11));
  ConvKernel<double> k{parameter(Tensor<double>({1, 1, 1, 1, 1}, 1.0)), parameter(Tensor<double>({1}, 0.0))};
  auto y = conv3d_transpose(x, k, {1, 1, 1});
  EXPECT_EQ(y->value.data, x->value.data);
}

TEST(Conv3dTranspose, IsAdjointOfConv) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto w = fixture::random_tensor({3, 2, 2, 2, 2}, 100 + seed);
    // conv weights (out=3, in=2); the transpose reads them as (in=3, out=2).
    ConvKernel<double> k{parameter(w), nullptr};
    const auto x = fixture::random_tensor({1, 2, 4, 6, 4}, 200 + seed);
    const auto y = fixture::random_tensor({1, 3, 2, 3, 2}, 300 + seed);
    const auto cx = conv3d(constant(x), k, {2, 2, 2}, {0, 0, 0})->value;
    const auto ty = conv3d_transpose(constant(y), k, {2, 2, 2})->value;
    ASSERT_EQ(ty.shape, x.shape);
    EXPECT_LE(rel_diff(inner(cx, y), inner(x, ty)), 1e-5);
  }
}

TEST(Conv3dTranspose, BlockSumsEqualInput) {
  Tensor<double> in({1, 1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  ConvKernel<double> k{parameter(Tensor<double>({1, 1, 2, 2, 2}, 1.0)), nullptr};
  const auto out = conv3d_transpose(constant(in), k, {2, 2, 2})->value;
  ASSERT_EQ(out.shape, (Shape{1, 1, 4, 4, 4}));
  for (std::size_t d = 0; d < 2; ++d)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t w = 0; w < 2; ++w) {
        double s = 0;
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t c = 0; c < 2; ++c) s += out.at(0, 0, 2 * d + a, 2 * h + b, 2 * w + c);
        EXPECT_EQ(s, 8.0 * in.at(0, 0, d, h, w));
      }
}

TEST(Conv3dTranspose, GradientsMatchFiniteDifferences) {
  auto x = parameter(fixture::random_tensor({1, 3, 2, 2, 3}, 12));
  const auto k = kernel({3, 2, 2, 2, 2}, 13, false);
  ConvKernel<double> kt{k.weight, parameter(fixture::random_tensor({2}, 14))};
  const auto w = fixture::random_tensor({1, 2, 4, 4, 6}, 15);
  auto loss = [&] { return sum(mul(conv3d_transpose(x, kt, {2, 2, 2}), constant(w))); };
  const auto r = oracle::gradient_check(loss, {{"x", x}, {"w", kt.weight}, {"b", kt.bias}});
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

// --- maxpool / repeat ------------------------------------------------------

TEST(MaxPool, ConstantVolume) {
  auto y = maxpool3d(constant(Tensor<double>({1, 2, 4, 4, 4}, 3.5)), {2, 2, 2}, {2, 2, 2});
  EXPECT_EQ(y->value.shape, (Shape{1, 2, 2, 2, 2}));
  for (double v : y->value.data) EXPECT_EQ(v, 3.5);
}

TEST(MaxPool, OneToEight) {
  Tensor<double> in({1, 1, 2, 2, 2}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  auto y = maxpool3d(constant(in), {2, 2, 2}, {2, 2, 2});
  EXPECT_EQ(y->value.data, std::vector<double>{8});
}

TEST(MaxPool, MatchesWindowScanOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = fixture::random_tensor({2, 3, 4, 6, 8}, 400 + seed);
    EXPECT_EQ(maxpool3d(constant(x), {2, 2, 2}, {2, 2, 2})->value.data,
              oracle::maxpool3d(x, {2, 2, 2}, {2, 2, 2}).data);
  }
}

TEST(MaxPool, TiesRouteGradientToFirstIndex) {
  auto x = parameter(Tensor<double>({1, 1, 2, 2, 2}, 1.0));
  backward(sum(maxpool3d(x, {2, 2, 2}, {2, 2, 2})));
  EXPECT_EQ(x->grad.data[0], 1.0);
  for (std::size_t i = 1; i < 8; ++i) EXPECT_EQ(x->grad.data[i], 0.0);
}

TEST(MaxPool, RejectsIndivisibleDims) {
  EXPECT_THROW(maxpool3d(constant(Tensor<double>({1, 1, 3, 4, 4})), {2, 2, 2}, {2, 2, 2}), ShapeError);
}

TEST(MaxPool, GradientsMatchFiniteDifferences) {
  auto x = parameter(fixture::random_tensor({1, 2, 4, 4, 2}, 16));
  const auto w = fixture::random_tensor({1, 2, 2, 2, 1}, 17);
  const auto r = oracle::gradient_check([&] { return sum(mul(maxpool3d(x, {2, 2, 2}, {2, 2, 2}), constant(w))); },
                                        {{"x", x}});
  EXPECT_GT(r.checked, 0u);
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

TEST(RepeatUpsample, UnitFactorIsIdentity) {
  const auto x = fixture::random_tensor({1, 2, 2, 3, 4}, 18);
  EXPECT_EQ(repeat_upsample3d(constant(x), {1, 1, 1})->value.data, x.data);
}

TEST(RepeatUpsample, SingleVoxelTilesBlock) {
  auto y = repeat_upsample3d(constant(Tensor<double>({1, 1, 1, 1, 1}, 2.5)), {2, 2, 2});
  EXPECT_EQ(y->value.shape, (Shape{1, 1, 2, 2, 2}));
  for (double v : y->value.data) EXPECT_EQ(v, 2.5);
}

TEST(RepeatUpsample, MaxPoolInvertsIt) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto x = fixture::random_tensor({1, 3, 2, 3, 4}, 500 + seed);
    auto y = maxpool3d(repeat_upsample3d(constant(x), {2, 2, 2}), {2, 2, 2}, {2, 2, 2});
    EXPECT_EQ(y->value.data, x.data);
  }
}

TEST(RepeatUpsample, GradientSumsOverBlock) {
  auto x = parameter(fixture::random_tensor({1, 1, 2, 2, 2}, 19));
  const auto w = fixture::random_tensor({1, 1, 4, 6, 2}, 20);
  const auto r = oracle::gradient_check([&] { return sum(mul(repeat_upsample3d(x, {2, 3, 1}), constant(w))); },
                                        {{"x", x}});
  EXPECT_EQ(r.checked, 8u);
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

// --- batchnorm --------------------------------------------------------------

TEST(BatchNorm, ConstantChannelNormalizesToZero) {
  auto bn = make_batchnorm<double>(2);
  auto y = batchnorm3d(constant(Tensor<double>({1, 2, 2, 2, 2}, 4.0)), bn, Mode::Train);
  for (double v : y->value.data) EXPECT_EQ(v, 0.0);
}

TEST(BatchNorm, StandardizedInputIsAffinelyMapped) {
  // Eight values with mean 0 and variance 1: +-1 alternating.
  Tensor<double> in({1, 1, 2, 2, 2});
  for (std::size_t i = 0; i < 8; ++i) in.data[i] = (i % 2) ? 1.0 : -1.0;
  auto bn = make_batchnorm<double>(1);
  bn.gamma->value.data[0] = 2.0;
  bn.beta->value.data[0] = 3.0;
  auto y = batchnorm3d(constant(in), bn, Mode::Train);
  const double shrink = 1.0 / std::sqrt(1.0 + 1e-5);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(y->value.data[i], 2.0 * in.data[i] * shrink + 3.0, 1e-12);
}

TEST(BatchNorm, RunningStatisticsFollowMomentum) {
  Tensor<double> in({1, 1, 1, 1, 2}, std::vector<double>{1.0, 3.0});
  auto bn = make_batchnorm<double>(1);
  batchnorm3d(constant(in), bn, Mode::Train);
  EXPECT_DOUBLE_EQ(bn.running_mean.data[0], 0.9 * 0.0 + 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(bn.running_var.data[0], 0.9 * 1.0 + 0.1 * 1.0);
}

TEST(BatchNorm, InferUsesRunningStatistics) {
  auto bn = make_batchnorm<double>(1);
  bn.running_mean.data[0] = 1.0;
  bn.running_var.data[0] = 4.0 - 1e-5;
  Tensor<double> in({1, 1, 1, 1, 2}, std::vector<double>{1.0, 5.0});
  auto y = batchnorm3d(constant(in), bn, Mode::Infer);
  EXPECT_NEAR(y->value.data[0], 0.0, 1e-12);
  EXPECT_NEAR(y->value.data[1], 2.0, 1e-12);
  EXPECT_EQ(bn.running_mean.data[0], 1.0);
}

TEST(BatchNorm, TrainGradientsMatchFiniteDifferences) {
  auto x = parameter(fixture::random_tensor({2, 3, 2, 3, 2}, 21));
  auto bn = make_batchnorm<double>(3);
  bn.gamma->value = fixture::random_tensor({3}, 22, 0.5, 1.5);
  bn.beta->value = fixture::random_tensor({3}, 23);
  const auto w = fixture::random_tensor({2, 3, 2, 3, 2}, 24);
  const auto r = oracle::gradient_check([&] { return sum(mul(batchnorm3d(x, bn, Mode::Train), constant(w))); },
                                        {{"x", x}, {"gamma", bn.gamma}, {"beta", bn.beta}});
  EXPECT_GT(r.checked, 60u);
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

TEST(BatchNorm, RejectsChannelMismatch) {
  auto bn = make_batchnorm<double>(2);
  EXPECT_THROW(batchnorm3d(constant(Tensor<double>({1, 3, 1, 1, 1})), bn, Mode::Train), ShapeError);
}

// --- activations -------------------------------------------------------------

TEST(Relu, Definition) {
  auto x = parameter(Tensor<double>({3}, std::vector<double>{-1.0, 0.0, 2.0}));
  auto y = relu(x);
  EXPECT_EQ(y->value.data, (std::vector<double>{0.0, 0.0, 2.0}));
  backward(sum(y));
  EXPECT_EQ(x->grad.data, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Softmax, EqualLogitsAreUniform) {
  auto y = softmax_channels(constant(Tensor<double>({1, 4, 2, 2, 2}, 0.7)));
  for (double v : y->value.data) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, ChannelSumsAreOne) {
  const auto x = fixture::random_tensor({2, 5, 3, 3, 3}, 25, -30.0, 30.0);
  const auto y = softmax_channels(constant(x))->value;
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t i = 0; i < 27; ++i) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        const double p = y.data[(n * 5 + c) * 27 + i];
        EXPECT_GE(p, 0.0);
        s += p;
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, LargeLogitsStayFinite) {
  Tensor<double> x({1, 2, 1, 1, 1}, std::vector<double>{1000.0, 999.0});
  const auto y = softmax_channels(constant(x))->value;
  EXPECT_NEAR(y.data[0], 1.0 / (1.0 + std::exp(-1.0)), 1e-12);
}

TEST(Softmax, GradientsMatchFiniteDifferences) {
  auto x = parameter(fixture::random_tensor({1, 3, 2, 2, 2}, 26, -2.0, 2.0));
  const auto w = fixture::random_tensor({1, 3, 2, 2, 2}, 27);
  const auto r = oracle::gradient_check([&] { return sum(mul(softmax_channels(x), constant(w))); }, {{"x", x}});
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

// --- elementwise ---------------------------------------------------------------

TEST(Elementwise, AddZerosIsIdentity) {
  const auto x = fixture::random_tensor({1, 2, 2, 2, 2}, 28);
  EXPECT_EQ(add(constant(x), constant(Tensor<double>(x.shape, 0.0)))->value.data, x.data);
}

TEST(Elementwise, MulByZerosBlocksGradientExactly) {
  auto x = parameter(fixture::random_tensor({1, 2, 3, 3, 3}, 29));
  auto y = mul(x, constant(Tensor<double>(x->value.shape, 0.0)));
  for (double v : y->value.data) EXPECT_EQ(v, 0.0);
  backward(sum(softmax_channels(add_scalar(y, 1.0))));
  for (double g : x->grad.data) {
    EXPECT_EQ(g, 0.0);
    EXPECT_FALSE(std::signbit(g));
  }
}

TEST(Elementwise, MaskedCoordinatesGetBitwiseZeroGradient) {
  auto x = parameter(fixture::random_tensor({1, 1, 2, 2, 2}, 30));
  Tensor<double> mask({1, 1, 2, 2, 2}, std::vector<double>{1, 0, 1, 0, 0, 1, 1, 0});
  backward(sum(mul(mul(x, constant(mask)), x)));
  for (std::size_t i = 0; i < 8; ++i) {
    if (mask.data[i] == 0.0) {
      std::uint64_t bits;
      std::memcpy(&bits, &x->grad.data[i], sizeof bits);
      EXPECT_EQ(bits, 0u);
    } else {
      EXPECT_DOUBLE_EQ(x->grad.data[i], 2.0 * x->value.data[i]);
    }
  }
}

TEST(Elementwise, ConcatAndSliceRoundTrip) {
  const auto a = fixture::random_tensor({1, 2, 4, 4, 4}, 31);
  const auto b = fixture::random_tensor({1, 1, 4, 4, 4}, 32);
  auto c = concat_channels(constant(a), constant(b));
  EXPECT_EQ(c->value.shape, (Shape{1, 3, 4, 4, 4}));
  EXPECT_EQ(slice_channels(c, 0, 2)->value.data, a.data);
  EXPECT_EQ(slice_channels(c, 2, 1)->value.data, b.data);
}

TEST(Elementwise, ShapeMismatchesAreRejected) {
  auto a = constant(Tensor<double>({1, 2, 2, 2, 2}));
  auto b = constant(Tensor<double>({1, 3, 2, 2, 2}));
  EXPECT_THROW(add(a, b), ShapeError);
  EXPECT_THROW(mul(a, b), ShapeError);
  EXPECT_THROW(concat_channels(a, constant(Tensor<double>({1, 1, 2, 2, 3}))), ShapeError);
  EXPECT_THROW(slice_channels(a, 1, 2), ShapeError);
}

TEST(Elementwise, GradientsMatchFiniteDifferences) {
  auto a = parameter(fixture::random_tensor({1, 2, 2, 2, 2}, 33, 0.5, 1.5));
  auto b = parameter(fixture::random_tensor({1, 1, 2, 2, 2}, 34, 0.5, 1.5));
  const std::size_t picks[] = {0, 2};
  auto loss = [&] {
    auto c = concat_channels(a, b);
    auto s = sum_channels(c, std::span<const std::size_t>(picks));
    auto q = div(sub(s, slice_channels(a, 1, 1)), add_scalar(mul(b, b), 1.0));
    return sum(add(log_clamped(add_scalar(scale(q, 0.5), 2.0), 1e-12), q));
  };
  const auto r = oracle::gradient_check(loss, {{"a", a}, {"b", b}});
  EXPECT_EQ(r.failures, 0u) << r.worst;
}

TEST(Elementwise, LogClampBlocksGradientBelowFloor) {
  auto x = parameter(Tensor<double>({2}, std::vector<double>{1e-20, 0.5}));
  auto y = log_clamped(x, 1e-12);
  EXPECT_DOUBLE_EQ(y->value.data[0], std::log(1e-12));
  backward(sum(y));
  EXPECT_EQ(x->grad.data[0], 0.0);
  EXPECT_DOUBLE_EQ(x->grad.data[1], 2.0);
}
