#include <gtest/gtest.h>

#include "uception/config.hpp"

using namespace uception;

namespace {

std::string subject_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Config);
    return e.subject();
  }
  ADD_FAILURE() << "no error";
  return {};
}

}  // namespace

TEST(Config, DefaultsMatchTheReferenceSetup) {
  const TrainConfig c;
  EXPECT_EQ(c.depth, 10u);
  EXPECT_EQ(c.levels, 3u);
  EXPECT_EQ(c.dropout, 0.25);
  EXPECT_EQ(c.lr_max, 1e-3);
  EXPECT_EQ(c.lr_min, 1e-5);
  EXPECT_EQ(c.cycle_epochs, 20u);
  EXPECT_EQ(c.epochs, 40u);
  EXPECT_EQ(c.batch, 2u);
  EXPECT_EQ(c.patch, 64u);
  EXPECT_EQ(c.snapshots, 5u);
  EXPECT_NO_THROW(validate(c));
}

TEST(Config, ParsesCommentsBlankLinesAndWhitespace) {
  const auto c = parse_config("# run\n\n depth =4 \nlevels= 2 # shallow\r\nlr_max = 3e-3\narch = unet3d\n");
  EXPECT_EQ(c.depth, 4u);
  EXPECT_EQ(c.levels, 2u);
  EXPECT_EQ(c.lr_max, 3e-3);
  EXPECT_EQ(c.arch, "unet3d");
}

TEST(Config, TextRoundTripIsExact) {
  TrainConfig c;
  c.lr_max = 0.1 + 0.2;  // not representable in short decimal
  c.dropout = 1.0 / 3.0;
  c.seed = 1234567890123ull;
  c.arch = "unet3d";
  c.patch = 32;
  EXPECT_EQ(parse_config(config_to_text(c)), c);
}

TEST(Config, UnknownKeyListsTheValidOnes) {
  try {
    parse_config("learning_rate = 1\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.subject(), "learning_rate");
    EXPECT_NE(std::string(e.what()).find("lr_max"), std::string::npos);
  }
}

TEST(Config, BadValuesNameTheirKey) {
  EXPECT_EQ(subject_of([] { parse_config("depth = -1\n"); }), "depth");
  EXPECT_EQ(subject_of([] { parse_config("depth = 3.5\n"); }), "depth");
  EXPECT_EQ(subject_of([] { parse_config("lr_max = nan\n"); }), "lr_max");
  EXPECT_EQ(subject_of([] { parse_config("dropout = 1\n"); }), "dropout");
  EXPECT_EQ(subject_of([] { parse_config("lr_min = 1\n"); }), "lr_min");
  EXPECT_EQ(subject_of([] { parse_config("patch = 36\n"); }), "patch");
  EXPECT_EQ(subject_of([] { parse_config("levels = 0\n"); }), "levels");
  EXPECT_EQ(subject_of([] { parse_config("precision = 16\n"); }), "precision");
  EXPECT_EQ(subject_of([] { parse_config("arch = vnet\n"); }), "arch");
  EXPECT_EQ(subject_of([] { parse_config("depth = 2\ndepth = 3\n"); }), "depth");
  EXPECT_EQ(subject_of([] { parse_config("depth 2\n"); }), "line 1");
}

TEST(Config, PatchMustDivideByTwoToTheLevels) {
  EXPECT_NO_THROW(parse_config("levels = 4\npatch = 16\n"));
  EXPECT_THROW(parse_config("levels = 4\npatch = 24\n"), Error);
}

TEST(Config, LaterSourcesOverrideEarlierOnes) {
  TrainConfig base;
  base.depth = 7;
  const auto c = parse_config("levels = 2\n", base);
  EXPECT_EQ(c.depth, 7u);
  EXPECT_EQ(c.levels, 2u);
  TrainConfig d = c;
  set_config_value(d, "depth", " 3 ");
  EXPECT_EQ(d.depth, 3u);
}

TEST(Config, ModelConfigCarriesArchitectureFields) {
  const auto c = parse_config("arch = unet3d\ndepth = 4\nlevels = 2\ndropout = 0.1\nseed = 9\n");
  const auto m = model_config(c);
  EXPECT_EQ(m.arch, Arch::UNet3d);
  EXPECT_EQ(m.depth, 4u);
  EXPECT_EQ(m.levels, 2u);
  EXPECT_EQ(m.dropout_rate, 0.1);
  EXPECT_EQ(m.init_seed, 9u);
}
