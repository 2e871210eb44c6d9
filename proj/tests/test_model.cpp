#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "test_support.hpp"
#include "uception/model.hpp"

using namespace uception;
using namespace uception::testing;

namespace {

// Parameter tally written straight from the layer list, one conv at a time.
std::size_t conv_params(std::size_t k, std::size_t in, std::size_t out) {
  return k * k * k * in * out + out;
}

std::size_t deep_params(std::size_t in, std::size_t d) {
  return conv_params(1, in, d)                                // 1x1x1 branch
         + conv_params(1, in, d) + conv_params(5, d, d)       // 5x5x5 branch
         + conv_params(1, in, d) + conv_params(7, d, d)       // 7x7x7 branch
         + conv_params(1, in, d);                             // pool projection
}

std::size_t reduction_params(std::size_t in, std::size_t d) {
  return conv_params(3, in, d) + conv_params(1, in, d) + conv_params(3, d, d);
}

std::size_t uception_tally(std::size_t D, std::size_t L) {
  std::size_t total = conv_params(3, 1, D), c = D;
  std::vector<std::size_t> skip;
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t d = D << l;
    total += deep_params(c, d);
    c = 4 * d;
    skip.push_back(c);
    total += reduction_params(c, d);
    c += 2 * d;
  }
  total += deep_params(c, D << L);
  c = 4 * (D << L);
  for (std::size_t l = L; l-- > 0;) {
    c += skip[l];
    total += deep_params(c, D << l);
    c = 4 * (D << l);
  }
  return total + conv_params(1, c, 1);
}

ModelCfg cfg(std::size_t D, std::size_t L, double dropout = 0.25, std::uint64_t seed = 3) {
  ModelCfg c;
  c.depth = D;
  c.levels = L;
  c.dropout_rate = dropout;
  c.init_seed = seed;
  return c;
}

template <class T>
void zero_parameters(ModelGraph<T>& m, std::string_view prefix = "") {
  for (auto& p : m.parameters())
    if (p.name.starts_with(prefix))
      for (T& v : p.value.values()) v = T(0);
}

std::size_t node_index(const ModelGraph<double>& m, const std::string& name) {
  for (std::size_t i = 0; i < m.nodes().size(); ++i)
    if (m.nodes()[i].name == name) return i;
  ADD_FAILURE() << "no node " << name;
  return 0;
}

}  // namespace

TEST(DeepBlock, EmitsFourBranchesOfDepthD) {
  auto block = make_deep_block<double>({1, 2}, 0.0, 1);
  const auto y = forward(block, random_tensor({1, 1, 8, 8, 8}, 1));
  EXPECT_EQ(y.shape(), (Shape5{1, 8, 8, 8, 8}));
}

TEST(DeepBlock, ZeroWeightsGiveZeroOutput) {
  auto block = make_deep_block<double>({2, 3}, 0.0, 1);
  zero_parameters(block);
  const auto y = forward(block, random_tensor({1, 2, 6, 6, 6}, 2, -5.0, 5.0));
  for (double v : y.values()) EXPECT_EQ(v, 0.0);
}

TEST(ReductionBlock, HalvesExtentsAndAddsTwoBranches) {
  auto block = make_reduction_block<double>({4, 3}, 0.0, 1);
  const auto y = forward(block, random_tensor({1, 4, 16, 16, 16}, 3));
  EXPECT_EQ(y.shape(), (Shape5{1, 10, 8, 8, 8}));
}

TEST(Uception, ThreeReductionsTake64To8AtTheBottleneck) {
  auto m = build_uception<float>(cfg(1, 3, 0.0));
  auto x = Tensor5<float>(1, 1, 64, 64, 64, 0.5f);
  const auto trace = forward_trace(m, x, Mode::Infer, 0);
  for (std::size_t i = 0; i < m.nodes().size(); ++i) {
    if (m.nodes()[i].name == "bottleneck.concat") {
      EXPECT_EQ(trace.outputs[i].shape(), (Shape5{1, 32, 8, 8, 8}));
      return;
    }
  }
  FAIL() << "no bottleneck node";
}

TEST(Uception, FullSizeMapsPatchToPatchStrictlyInsideUnitInterval) {
  auto m = build_uception<float>(cfg(10, 3));
  Tensor5<float> x(1, 1, 64, 64, 64);
  std::mt19937 gen(5);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (float& v : x.values()) v = u(gen);
  const auto y = forward(m, x);
  ASSERT_EQ(y.shape(), (Shape5{1, 1, 64, 64, 64}));
  for (float v : y.values()) {
    ASSERT_GT(v, 0.0f);
    ASSERT_LT(v, 1.0f);
  }
}

TEST(Uception, ParameterCountMatchesHandTally) {
  for (auto [D, L] : {std::pair<std::size_t, std::size_t>{10, 3}, {4, 2}, {2, 1}, {1, 4}}) {
    EXPECT_EQ(build_uception<float>(cfg(D, L)).parameter_count(), uception_tally(D, L))
        << "D=" << D << " L=" << L;
  }
}

TEST(Uception, ParameterNamesAreUnique) {
  auto m = build_uception<float>(cfg(2, 3));
  std::set<std::string> names;
  for (const auto& p : m.parameters()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
}

TEST(Uception, SameSeedSameParameters) {
  auto a = build_uception<double>(cfg(3, 2, 0.25, 9));
  auto b = build_uception<double>(cfg(3, 2, 0.25, 9));
  auto c = build_uception<double>(cfg(3, 2, 0.25, 10));
  bool differs = false;
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value);
    differs |= a.parameters()[i].value != c.parameters()[i].value;
  }
  EXPECT_TRUE(differs);
}

TEST(Uception, BiasesStartAtZeroAndWeightsHaveHeScale) {
  auto m = build_uception<double>(cfg(10, 3));
  for (const auto& p : m.parameters()) {
    if (p.name.ends_with(".bias")) {
      for (double v : p.value.values()) EXPECT_EQ(v, 0.0) << p.name;
    }
  }
  // 7x7x7 conv of level 0: fan-in 343*10, He variance 2/fan_in.
  const auto& w = m.parameters()[*m.find_parameter("enc0.deep.b7.weight")].value;
  double ss = 0.0;
  for (double v : w.values()) ss += v * v;
  EXPECT_NEAR(ss / w.size(), 2.0 / (343.0 * 10.0), 0.1 * 2.0 / (343.0 * 10.0));
}

TEST(Uception, InferIsRepeatableAndTrainWithoutDropoutMatchesInfer) {
  auto m = build_uception<double>(cfg(2, 2, 0.0));
  const auto x = random_tensor({2, 1, 8, 8, 8}, 4, 0.0, 1.0);
  const auto a = forward(m, x);
  EXPECT_EQ(a, forward(m, x));
  EXPECT_EQ(a, forward(m, x, Mode::Train, 77));
}

TEST(Uception, TrainModeDropoutIsSeeded) {
  auto m = build_uception<double>(cfg(2, 1, 0.25));
  const auto x = random_tensor({1, 1, 8, 8, 8}, 4, 0.0, 1.0);
  EXPECT_EQ(forward(m, x, Mode::Train, 5), forward(m, x, Mode::Train, 5));
  EXPECT_NE(forward(m, x, Mode::Train, 5), forward(m, x, Mode::Train, 6));
}

TEST(Uception, ZeroWeightModelOutputsOneHalf) {
  auto m = build_uception<double>(cfg(2, 2));
  zero_parameters(m);
  const auto y = forward(m, random_tensor({1, 1, 8, 8, 8}, 6));
  for (double v : y.values()) EXPECT_EQ(v, 0.5);
}

TEST(Uception, RejectsExtentsNotDivisibleByTwoToTheL) {
  auto m = build_uception<double>(cfg(1, 2));
  try {
    forward(m, Tensor5<double>(1, 1, 8, 6, 8));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ShapeMismatch);
    EXPECT_EQ(e.subject(), "height");
  }
}

TEST(Uception, OutputShapeFollowsInputForEveryValidPatch) {
  auto m = build_uception<float>(cfg(1, 2));
  for (auto s : {Shape5{1, 1, 4, 4, 4}, Shape5{2, 1, 8, 12, 4}, Shape5{1, 1, 16, 8, 20}}) {
    const auto y = forward(m, Tensor5<float>(s, 0.3f));
    EXPECT_EQ(y.shape(), s);
  }
}

// Decoder fed only through the skips: with every bottleneck weight at zero
// the upsampled path carries nothing, yet the head must still see the input.
TEST(Uception, SkipConnectionsCarryEncoderFeaturesToTheHead) {
  auto m = build_uception<double>(cfg(2, 1, 0.0, 11));
  zero_parameters(m, "bottleneck.");
  zero_parameters(m, "enc0.reduce.");
  const auto x = random_tensor({1, 1, 8, 8, 8}, 7, 0.0, 1.0);
  const auto trace = forward_trace(m, x, Mode::Infer, 0);
  const auto up = trace.outputs[node_index(m, "dec0.up")];
  for (double v : up.values()) ASSERT_EQ(v, 0.0);
  const auto g = backward(m, trace, Tensor5<double>(trace.output().shape(), 1.0));
  double norm = 0.0;
  for (double v : g.input.values()) norm += std::abs(v);
  EXPECT_GT(norm, 0.0);
}

// Input and parameter gradients of the full miniature against independent
// central differences on a fixed dropout draw. Biases are moved off zero so
// zero-padded borders do not sit exactly on a ReLU kink; any probe whose
// one-sided slopes still disagree straddles a kink and is left out.
TEST(Uception, MiniatureGradientMatchesFiniteDifferences) {
  auto m = build_uception<double>(cfg(2, 1, 0.25, 12));
  std::mt19937_64 gen(20);
  std::uniform_real_distribution<double> small(-0.1, 0.1);
  for (auto& p : m.parameters())
    if (p.name.ends_with(".bias"))
      for (double& v : p.value.values()) v = small(gen);
  auto x = random_tensor({1, 1, 8, 8, 8}, 8, 0.0, 1.0);
  const auto r = random_tensor({1, 1, 8, 8, 8}, 9);
  const std::uint64_t seed = 1234;
  auto loss = [&] { return dot(forward(m, x, Mode::Train, seed), r); };
  const auto g = backward(m, forward_trace(m, x, Mode::Train, seed), r);

  std::vector<double> analytic, numeric;
  std::size_t probes = 0, kinks = 0;
  auto probe = [&](Tensor5<double>& t, const Tensor5<double>& grad, std::size_t count) {
    for (std::size_t k = 0; k < count; ++k, ++probes) {
      const std::size_t i = gen() % t.size();
      const double saved = t[i], h = 1e-6;
      const double mid = loss();
      t[i] = saved + h;
      const double up = loss();
      t[i] = saved - h;
      const double down = loss();
      t[i] = saved;
      if (std::abs((up - mid) - (mid - down)) > 1e-5 * h * std::max(1.0, std::abs(mid))) {
        ++kinks;
        continue;
      }
      analytic.push_back(grad[i]);
      numeric.push_back((up - down) / (2 * h));
    }
  };
  probe(x, g.input, 40);
  for (std::size_t p = 0; p < m.parameters().size(); ++p) probe(m.parameters()[p].value, g.params[p], 3);
  EXPECT_LE(kinks * 20, probes);
  EXPECT_LT(relative_error(analytic, numeric), 1e-3);
}

TEST(UNet3d, ParameterCountWithinTenPercentOfUception) {
  for (auto [D, L] : {std::pair<std::size_t, std::size_t>{10, 3}, {4, 2}}) {
    const double u = static_cast<double>(build_uception<float>(cfg(D, L)).parameter_count());
    const double b = static_cast<double>(build_unet3d_baseline<float>(cfg(D, L)).parameter_count());
    EXPECT_LE(std::abs(b - u) / u, 0.10) << "D=" << D << " L=" << L;
  }
}

TEST(UNet3d, SameShapeContractAsUception) {
  auto m = build_unet3d_baseline<float>(cfg(4, 2));
  const auto y = forward(m, Tensor5<float>(1, 1, 16, 16, 16, 0.5f));
  EXPECT_EQ(y.shape(), (Shape5{1, 1, 16, 16, 16}));
  for (float v : y.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
}

TEST(UNet3d, MiniatureGradientMatchesFiniteDifferences) {
  ModelCfg c = cfg(2, 1, 0.25, 13);
  c.unet_width = 2;
  auto m = build_unet3d_baseline<double>(c);
  auto x = random_tensor({1, 1, 4, 4, 4}, 14, 0.0, 1.0);
  const auto r = random_tensor({1, 1, 4, 4, 4}, 15);
  auto loss = [&] { return dot(forward(m, x, Mode::Train, 99), r); };
  const auto g = backward(m, forward_trace(m, x, Mode::Train, 99), r);
  EXPECT_LT(relative_error(g.input.values(), numeric_gradient(x, loss)), 1e-4);
  auto& w = m.parameters()[0].value;
  EXPECT_LT(relative_error(g.params[0].values(), numeric_gradient(w, loss)), 1e-4);
}

TEST(BuildModel, RebuildsEitherArchitectureFromItsCfg) {
  auto a = build_uception<float>(cfg(2, 2));
  EXPECT_EQ(build_model<float>(a.cfg()).parameter_count(), a.parameter_count());
  auto b = build_unet3d_baseline<float>(cfg(2, 2));
  auto rebuilt = build_model<float>(b.cfg());
  EXPECT_EQ(rebuilt.parameter_count(), b.parameter_count());
  EXPECT_EQ(rebuilt.parameters()[0].value, b.parameters()[0].value);
}

TEST(BuildModel, RejectsZeroLevels) {
  EXPECT_THROW(build_uception<float>(cfg(2, 0)), Error);
}
