#include <gtest/gtest.h>

#include <numbers>

#include "uception/phantom.hpp"

using namespace uception;

namespace {

PhantomSpec straight_tube(double r) {
  PhantomSpec s;
  s.extents = Extent3::cube(64);
  s.noise = 0.0;
  s.tubes = 1;
  s.radius_min = s.radius_max = r;
  s.axis_aligned = true;
  s.blobs = 0;
  s.seed = 11;
  return s;
}

}  // namespace

TEST(Phantom, StraightTubeVolumeIsCloseToCylinder) {
  for (double r : {2.0, 3.0}) {
    const auto p = generate_phantom(straight_tube(r));
    const double cylinder = std::numbers::pi * r * r * 64.0;
    const double got = double(count_foreground(p.truth));
    EXPECT_NEAR(got / cylinder, 1.0, 0.20) << "r=" << r;
  }
}

TEST(Phantom, StraightTubeHasTheSameCrossSectionOnEverySlice) {
  const auto p = generate_phantom(straight_tube(2.0));
  std::size_t first = 0;
  for (std::size_t z = 0; z < p.truth.extents.d; ++z) {
    std::size_t n = 0;
    for (std::size_t y = 0; y < p.truth.extents.h; ++y)
      for (std::size_t x = 0; x < p.truth.extents.w; ++x) n += p.truth.at(z, y, x);
    if (z == 0) first = n;
    EXPECT_EQ(n, first) << z;
  }
  EXPECT_EQ(first, 13u);  // lattice points with y^2 + x^2 <= 4
}

TEST(Phantom, SameSeedSameVolumeDifferentSeedDifferentVolume) {
  PhantomSpec s;
  s.seed = 5;
  const auto a = generate_phantom(s), b = generate_phantom(s);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.truth, b.truth);
  s.seed = 6;
  EXPECT_NE(generate_phantom(s).truth, a.truth);
}

TEST(Phantom, DefaultsAreSparseAcrossSeeds) {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    PhantomSpec s;
    s.seed = seed;
    const auto p = generate_phantom(s);
    const double frac = double(count_foreground(p.truth)) / double(voxel_count(s.extents));
    EXPECT_GT(frac, 0.0);
    EXPECT_LT(frac, 0.05);
  }
}

TEST(Phantom, VesselsAreBrighterThanBackgroundOnAverage) {
  PhantomSpec s;
  s.seed = 3;
  s.blobs = 0;
  const auto p = generate_phantom(s);
  double fg = 0, bg = 0;
  std::size_t nf = 0, nb = 0;
  for (std::size_t i = 0; i < p.image.data.size(); ++i) {
    if (p.truth.data[i]) fg += p.image.data[i], ++nf;
    else bg += p.image.data[i], ++nb;
  }
  EXPECT_GT(fg / nf, bg / nb + 0.1);
}

TEST(Phantom, DenseSettingsRaiseSparseness) {
  PhantomSpec s;
  s.extents = {16, 16, 16};
  s.tubes = 12;
  s.radius_min = s.radius_max = 3.0;
  try {
    generate_phantom(s);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Sparseness);
  }
}

TEST(Phantom, InvalidSpecsAreRejected) {
  PhantomSpec s;
  s.tubes = 0;
  EXPECT_THROW(generate_phantom(s), Error);
  s = {};
  s.radius_min = 3.0;
  s.radius_max = 2.0;
  EXPECT_THROW(generate_phantom(s), Error);
  s = {};
  s.extents = {3, 64, 64};
  EXPECT_THROW(generate_phantom(s), Error);
}

TEST(Phantom, SpacingIsCarriedOntoBothVolumes) {
  PhantomSpec s;
  s.spacing = {0.8, 0.5, 0.5};
  const auto p = generate_phantom(s);
  EXPECT_EQ(p.image.spacing, s.spacing);
  EXPECT_EQ(p.truth.spacing, s.spacing);
}
