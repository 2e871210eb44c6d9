#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "test_support.hpp"
#include "uception/layers.hpp"

using namespace uception;
using namespace uception::testing;

namespace {

std::vector<double> zeros(std::size_t n) { return std::vector<double>(n, 0.0); }

}  // namespace

TEST(Conv3d, UnitKernelIsIdentity) {
  auto x = random_tensor({2, 1, 4, 5, 6}, 1);
  Tensor5<double> w(1, 1, 1, 1, 1, 1.0);
  auto y = conv3d(x, w, std::span<const double>(zeros(1)), ConvSpec::cube(1, 1, 1));
  EXPECT_EQ(y, x);
}

TEST(Conv3d, AllOnesValidKernelSumsReceptiveField) {
  Tensor5<double> x(1, 1, 3, 3, 3, 1.0);
  Tensor5<double> w(1, 1, 3, 3, 3, 1.0);
  auto y = conv3d(x, w, std::span<const double>(zeros(1)), ConvSpec::cube(3, 1, 1, 1, Padding::Valid));
  ASSERT_EQ(y.shape(), (Shape5{1, 1, 1, 1, 1}));
  EXPECT_DOUBLE_EQ(y[0], 27.0);
}

TEST(Conv3d, ZeroWeightsAnnihilate) {
  auto x = random_tensor({1, 3, 6, 6, 6}, 2);
  const auto spec = ConvSpec::cube(5, 3, 4);
  Tensor5<double> w(spec.weight_shape());
  auto y = conv3d(x, w, std::span<const double>(zeros(4)), spec);
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(Conv3d, MatchesDirectLoopsForEveryKernelStridePadding) {
  std::uint64_t seed = 10;
  for (std::size_t k : {1, 3, 5, 7}) {
    for (std::size_t s : {1, 2}) {
      for (Padding pad : {Padding::Same, Padding::Valid}) {
        const Shape5 xs{2, 2, 8, 9, 10};
        const ConvSpec spec = ConvSpec::cube(k, 2, 3, s, pad);
        auto x = random_tensor(xs, ++seed);
        auto w = random_tensor(spec.weight_shape(), ++seed);
        std::vector<double> b{0.1, -0.2, 0.3};
        auto y = conv3d(x, w, std::span<const double>(b), spec);
        auto ref = reference_conv(x, w, b, spec);
        ASSERT_EQ(y.shape(), ref.shape()) << "k=" << k << " s=" << s;
        EXPECT_LT(relative_error(y.values(), ref.values()), 1e-12) << "k=" << k << " s=" << s;
      }
    }
  }
}

TEST(Conv3d, ShapeFormulaHoldsForArchitectureKernels) {
  for (std::size_t k : {1, 3, 5, 7})
    for (std::size_t s : {1, 2})
      for (std::size_t in : {8, 9, 16, 33}) {
        const std::size_t pad = (k - 1) / 2;
        EXPECT_EQ(conv_out_extent(in, k, s, Padding::Same), (in + 2 * pad - k) / s + 1);
        if (in >= k) EXPECT_EQ(conv_out_extent(in, k, s, Padding::Valid), (in - k) / s + 1);
        if (s == 1) EXPECT_EQ(conv_out_extent(in, k, s, Padding::Same), in);
      }
}

TEST(Conv3d, ChannelMismatchNamesTheAxis) {
  Tensor5<double> x(1, 2, 4, 4, 4);
  const auto spec = ConvSpec::cube(3, 3, 1);
  Tensor5<double> w(spec.weight_shape());
  try {
    conv3d(x, w, std::span<const double>(zeros(1)), spec);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_EQ(e.subject(), "channel");
  }
}

TEST(Conv3d, WeightShapeMismatchNamesTheAxis) {
  Tensor5<double> x(1, 1, 4, 4, 4);
  const auto spec = ConvSpec::cube(3, 1, 1);
  Tensor5<double> w(1, 1, 3, 3, 5);
  try {
    conv3d(x, w, std::span<const double>(zeros(1)), spec);
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_EQ(e.subject(), "width");
  }
}

TEST(Conv3d, IsLinearInInputAndWeights) {
  const auto spec = ConvSpec::cube(3, 2, 2);
  auto x1 = random_tensor({1, 2, 6, 6, 6}, 3), x2 = random_tensor({1, 2, 6, 6, 6}, 4);
  auto w1 = random_tensor(spec.weight_shape(), 5), w2 = random_tensor(spec.weight_shape(), 6);
  const double a = 1.7, b = -0.4;
  const auto bias = zeros(2);
  auto conv = [&](const Tensor5<double>& x, const Tensor5<double>& w) {
    return conv3d(x, w, std::span<const double>(bias), spec);
  };
  Tensor5<double> xm(x1.shape()), wm(w1.shape());
  for (std::size_t i = 0; i < xm.size(); ++i) xm[i] = a * x1[i] + b * x2[i];
  for (std::size_t i = 0; i < wm.size(); ++i) wm[i] = a * w1[i] + b * w2[i];

  auto lhs_x = conv(xm, w1), y1 = conv(x1, w1), y2 = conv(x2, w1);
  auto lhs_w = conv(x1, wm), z2 = conv(x1, w2);
  std::vector<double> rhs_x(y1.size()), rhs_w(y1.size());
  for (std::size_t i = 0; i < y1.size(); ++i) {
    rhs_x[i] = a * y1[i] + b * y2[i];
    rhs_w[i] = a * y1[i] + b * z2[i];
  }
  EXPECT_LT(relative_error(lhs_x.values(), rhs_x), 1e-5);
  EXPECT_LT(relative_error(lhs_w.values(), rhs_w), 1e-5);
}

TEST(Conv3dBackward, ZeroUpstreamGivesZeroGradients) {
  const auto spec = ConvSpec::cube(3, 2, 3);
  auto x = random_tensor({1, 2, 5, 5, 5}, 7);
  auto w = random_tensor(spec.weight_shape(), 8);
  Tensor5<double> g(conv_output_shape(x.shape(), spec));
  auto r = conv3d_backward(x, w, g, spec);
  for (double v : r.grad_x.values()) EXPECT_EQ(v, 0.0);
  for (double v : r.grad_w.values()) EXPECT_EQ(v, 0.0);
  for (double v : r.grad_b) EXPECT_EQ(v, 0.0);
}

TEST(Conv3dBackward, IdentityKernelPassesGradientThrough) {
  auto x = random_tensor({1, 1, 4, 4, 4}, 9);
  Tensor5<double> w(1, 1, 1, 1, 1, 1.0);
  auto g = random_tensor(x.shape(), 10);
  auto r = conv3d_backward(x, w, g, ConvSpec::cube(1, 1, 1));
  EXPECT_EQ(r.grad_x, g);
  EXPECT_NEAR(r.grad_b[0], std::accumulate(g.values().begin(), g.values().end(), 0.0), 1e-12);
}

TEST(Conv3dBackward, RejectsWrongUpstreamShape) {
  const auto spec = ConvSpec::cube(3, 1, 1);
  Tensor5<double> x(1, 1, 4, 4, 4), w(spec.weight_shape()), g(1, 1, 4, 4, 3);
  EXPECT_THROW(conv3d_backward(x, w, g, spec), Error);
}

TEST(Conv3dBackward, MatchesFiniteDifferences) {
  for (auto [k, s, pad] : {std::tuple{3, 1, Padding::Same}, std::tuple{3, 2, Padding::Same},
                           std::tuple{3, 1, Padding::Valid}, std::tuple{5, 1, Padding::Same},
                           std::tuple{1, 1, Padding::Same}}) {
    const auto spec = ConvSpec::cube(k, 2, 2, s, pad);
    auto x = random_tensor({1, 2, 5, 5, 5}, 11);
    auto w = random_tensor(spec.weight_shape(), 12);
    std::vector<double> b{0.3, -0.1};
    auto probe = random_tensor(conv_output_shape(x.shape(), spec), 13);
    auto loss = [&] { return dot(conv3d(x, w, std::span<const double>(b), spec), probe); };
    auto r = conv3d_backward(x, w, probe, spec);
    EXPECT_LT(relative_error(r.grad_x.values(), numeric_gradient(x, loss)), 1e-4) << k << s;
    EXPECT_LT(relative_error(r.grad_w.values(), numeric_gradient(w, loss)), 1e-4) << k << s;
    Tensor5<double> bt({2, 1, 1, 1, 1}, std::vector<double>(b));
    auto loss_b = [&] {
      return dot(conv3d(x, w, std::span<const double>(bt.storage()), spec), probe);
    };
    EXPECT_LT(relative_error(r.grad_b, numeric_gradient(bt, loss_b)), 1e-4);
  }
}

TEST(MaxPool3d, ConstantInputGivesConstantHalfExtents) {
  Tensor5<double> x(1, 2, 4, 6, 8, 3.5);
  auto r = maxpool3d(x);
  EXPECT_EQ(r.output.shape(), (Shape5{1, 2, 2, 3, 4}));
  for (double v : r.output.values()) EXPECT_EQ(v, 3.5);
}

TEST(MaxPool3d, BlockMaximaOfARamp) {
  Tensor5<double> x(1, 1, 4, 4, 4);
  std::iota(x.values().begin(), x.values().end(), 0.0);
  auto r = maxpool3d(x);
  for (std::size_t bz = 0; bz < 2; ++bz)
    for (std::size_t by = 0; by < 2; ++by)
      for (std::size_t bx = 0; bx < 2; ++bx) {
        double best = -1;
        for (std::size_t dz = 0; dz < 2; ++dz)
          for (std::size_t dy = 0; dy < 2; ++dy)
            for (std::size_t dx = 0; dx < 2; ++dx)
              best = std::max(best, x(0, 0, 2 * bz + dz, 2 * by + dy, 2 * bx + dx));
        EXPECT_EQ(r.output(0, 0, bz, by, bx), best);
      }
}

TEST(MaxPool3d, ShapeAlgebra) {
  Tensor5<double> x(1, 3, 8, 8, 8);
  EXPECT_EQ(maxpool3d(x).output.shape(), (Shape5{1, 3, 4, 4, 4}));
}

TEST(MaxPool3d, OddExtentIsRejected) {
  Tensor5<double> x(1, 1, 4, 5, 4);
  try {
    maxpool3d(x);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::OddExtent);
    EXPECT_EQ(e.subject(), "height");
  }
}

TEST(MaxPool3d, BackwardMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 6, 6, 6}, 14);
  auto probe = random_tensor({1, 2, 3, 3, 3}, 15);
  auto loss = [&] { return dot(maxpool3d(x).output, probe); };
  auto r = maxpool3d(x);
  auto g = maxpool3d_backward(probe, std::span<const std::uint32_t>(r.argmax), x.shape());
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
}

TEST(MaxPool3d, SameStrideOneWindowPreservesExtents) {
  auto x = random_tensor({1, 2, 5, 6, 7}, 16);
  auto r = maxpool3d(x, Extent3::cube(3), Extent3::cube(1), Padding::Same);
  EXPECT_EQ(r.output.shape(), x.shape());
  // corner voxel sees only the 2x2x2 in-range neighbours
  double best = -1e9;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) best = std::max(best, x(0, 1, z, y, xx));
  EXPECT_EQ(r.output(0, 1, 0, 0, 0), best);

  auto probe = random_tensor(x.shape(), 17);
  auto loss = [&] {
    return dot(maxpool3d(x, Extent3::cube(3), Extent3::cube(1), Padding::Same).output, probe);
  };
  auto g = maxpool3d_backward(probe, std::span<const std::uint32_t>(r.argmax), x.shape());
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
}

TEST(Upsample, PoolingUndoesReplication) {
  auto x = random_tensor({2, 3, 3, 4, 5}, 18);
  EXPECT_EQ(maxpool3d(upsample_nearest(x)).output, x);
}

TEST(Upsample, SingleVoxelBecomesCube) {
  Tensor5<double> x(1, 1, 1, 1, 1, 7.0);
  auto y = upsample_nearest(x);
  EXPECT_EQ(y.shape(), (Shape5{1, 1, 2, 2, 2}));
  for (double v : y.values()) EXPECT_EQ(v, 7.0);
}

TEST(Upsample, BackwardSumsReplicasAndMatchesFiniteDifferences) {
  auto x = random_tensor({1, 2, 3, 3, 3}, 19);
  auto probe = random_tensor({1, 2, 6, 6, 6}, 20);
  auto g = upsample_nearest_backward(probe);
  double block = 0.0;
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 2; ++y)
      for (int xx = 0; xx < 2; ++xx) block += probe(0, 1, 2 + z, 4 + y, xx);
  EXPECT_NEAR(g(0, 1, 1, 2, 0), block, 1e-12);
  auto loss = [&] { return dot(upsample_nearest(x), probe); };
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
}

TEST(Concat, SingleInputIsIdentity) {
  std::vector<Tensor5<double>> xs{random_tensor({1, 2, 2, 2, 2}, 21)};
  EXPECT_EQ(concat_channels(xs), xs[0]);
}

TEST(Concat, ChannelsAddAndSplitRecoversInputs) {
  std::vector<Tensor5<double>> xs{random_tensor({2, 2, 4, 4, 4}, 22),
                                  random_tensor({2, 3, 4, 4, 4}, 23)};
  auto y = concat_channels(xs);
  EXPECT_EQ(y.shape(), (Shape5{2, 5, 4, 4, 4}));
  const std::vector<std::size_t> counts{2, 3};
  auto parts = split_channels(y, std::span<const std::size_t>(counts));
  EXPECT_EQ(parts[0], xs[0]);
  EXPECT_EQ(parts[1], xs[1]);
}

TEST(Concat, SpatialMismatchIsRejected) {
  std::vector<Tensor5<double>> xs{Tensor5<double>(1, 1, 4, 4, 4), Tensor5<double>(1, 1, 4, 2, 4)};
  try {
    concat_channels(xs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.subject(), "height");
  }
}

TEST(Activations, SigmoidOfZeroIsHalfAndRangeIsOpen) {
  EXPECT_EQ(sigmoid(0.0), 0.5);
  Tensor5<double> x(1, 1, 1, 1, 4);
  x[0] = -30;
  x[1] = 30;
  x[2] = -5;
  x[3] = 5;
  const auto y = sigmoid(x);
  for (double v : y.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}

TEST(Activations, SigmoidStaysInsideOpenIntervalInSinglePrecision) {
  for (float v : {-200.0f, -60.0f, 30.0f, 60.0f, 200.0f}) {
    EXPECT_GT(sigmoid(v), 0.0f);
    EXPECT_LT(sigmoid(v), 1.0f);
  }
}

TEST(Activations, ReluBackwardMatchesFiniteDifferencesAwayFromZero) {
  auto x = random_tensor({1, 2, 4, 4, 4}, 24);
  for (double& v : x.values())
    if (std::abs(v) < 1e-3) v = 0.5;
  auto probe = random_tensor(x.shape(), 25);
  auto g = relu_backward(x, probe);
  auto loss = [&] { return dot(relu(x), probe); };
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
  for (std::size_t i = 0; i < x.size(); ++i)
    if (x[i] < 0) EXPECT_EQ(g[i], 0.0);
}

TEST(Activations, SigmoidBackwardMatchesFiniteDifferences) {
  auto x = random_tensor({1, 1, 4, 4, 4}, 26, -4, 4);
  auto probe = random_tensor(x.shape(), 27);
  auto g = sigmoid_backward(sigmoid(x), probe);
  auto loss = [&] { return dot(sigmoid(x), probe); };
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
}

TEST(Dropout, RateZeroIsIdentityWithFullMask) {
  auto x = random_tensor({1, 2, 3, 3, 3}, 28);
  auto r = dropout(x, 0.0, 99);
  EXPECT_EQ(r.output, x);
  for (auto m : r.mask) EXPECT_EQ(m, 1);
}

TEST(Dropout, InferModeIsIdentity) {
  auto x = random_tensor({1, 2, 3, 3, 3}, 29);
  EXPECT_EQ(dropout(x, 0.25, 99, Mode::Infer).output, x);
}

TEST(Dropout, RateOneIsRejected) {
  EXPECT_THROW(dropout(Tensor5<double>(1, 1, 1, 1, 1), 1.0, 0), Error);
}

TEST(Dropout, SameSeedSameMask) {
  auto x = random_tensor({1, 1, 4, 4, 4}, 30);
  EXPECT_EQ(dropout(x, 0.25, 7).mask, dropout(x, 0.25, 7).mask);
  EXPECT_NE(dropout(x, 0.25, 7).mask, dropout(x, 0.25, 8).mask);
}

TEST(Dropout, ExpectationApproachesInput) {
  auto x = random_tensor({1, 1, 2, 2, 2}, 31, 0.5, 2.0);
  const double rate = 0.25;
  const int draws = 10000;
  std::vector<double> sum(x.size(), 0.0);
  for (int s = 0; s < draws; ++s) {
    auto r = dropout(x, rate, static_cast<std::uint64_t>(s));
    for (std::size_t i = 0; i < x.size(); ++i) sum[i] += r.output[i];
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    // per-draw sd of inverted dropout: x * sqrt(rate / (1 - rate))
    const double se = x[i] * std::sqrt(rate / (1 - rate)) / std::sqrt(double(draws));
    EXPECT_NEAR(sum[i] / draws, x[i], 3 * se);
  }
}

TEST(Dropout, BackwardMatchesFiniteDifferencesForFixedSeed) {
  auto x = random_tensor({1, 2, 3, 3, 3}, 32);
  auto probe = random_tensor(x.shape(), 33);
  auto r = dropout(x, 0.25, 5);
  auto g = dropout_backward(probe, std::span<const std::uint8_t>(r.mask), 0.25);
  auto loss = [&] { return dot(dropout(x, 0.25, 5).output, probe); };
  EXPECT_LT(relative_error(g.values(), numeric_gradient(x, loss)), 1e-4);
}
