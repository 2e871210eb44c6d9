#include <gtest/gtest.h>

#include "uception/checkpoint.hpp"

using namespace uception;

namespace {

ModelCfg small_cfg(Arch arch = Arch::Uception) {
  ModelCfg c;
  c.arch = arch;
  c.depth = 2;
  c.levels = 2;
  c.init_seed = 17;
  return c;
}

template <class T>
std::vector<Tensor5<T>> values_of(const ModelGraph<T>& m) {
  return parameter_values(m);
}

ErrorCode code_of(const auto& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error";
  return ErrorCode::Io;
}

}  // namespace

TEST(Checkpoint, FloatRoundTripIsBitExact) {
  for (Arch a : {Arch::Uception, Arch::UNet3d}) {
    const auto m = build_model<float>(small_cfg(a));
    const auto bytes = encode_checkpoint(m, {m.cfg(), 32, 7});
    EXPECT_EQ(checkpoint_real_bytes(bytes), 4u);
    CheckpointMeta meta;
    const auto back = decode_checkpoint<float>(bytes, &meta);
    EXPECT_EQ(values_of(back), values_of(m));
    EXPECT_EQ(meta.patch, 32u);
    EXPECT_EQ(meta.epoch, 7u);
    EXPECT_EQ(meta.cfg.arch, a);
    EXPECT_EQ(meta.cfg.depth, 2u);
  }
}

TEST(Checkpoint, DoubleCheckpointLoadsIntoFloatModel) {
  const auto m = build_model<double>(small_cfg());
  const auto bytes = encode_checkpoint(m, {m.cfg(), 16, 0});
  EXPECT_EQ(checkpoint_real_bytes(bytes), 8u);
  const auto f = decode_checkpoint<float>(bytes);
  const auto a = values_of(m);
  const auto b = values_of(f);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < a[i].size(); ++k)
      ASSERT_EQ(b[i].storage()[k], static_cast<float>(a[i].storage()[k]));
}

TEST(Checkpoint, CorruptionIsDetected) {
  const auto m = build_model<float>(small_cfg());
  const auto good = encode_checkpoint(m, {m.cfg(), 16, 0});
  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(code_of([&] { decode_checkpoint<float>(bad); }), ErrorCode::BadMagic);
  bad = good;
  bad.resize(good.size() - 1);
  EXPECT_EQ(code_of([&] { decode_checkpoint<float>(bad); }), ErrorCode::PayloadLength);
  bad = good;
  bad.push_back(0);
  EXPECT_EQ(code_of([&] { decode_checkpoint<float>(bad); }), ErrorCode::PayloadLength);
  bad = good;
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bad.data() + bad.size() - 4, &inf, 4);
  EXPECT_EQ(code_of([&] { decode_checkpoint<float>(bad); }), ErrorCode::NonFinite);
}

TEST(Checkpoint, TruncationAtEveryLengthFailsTyped) {
  const auto m = build_model<float>(small_cfg());
  const auto good = encode_checkpoint(m, {m.cfg(), 16, 0});
  for (std::size_t n = 0; n < good.size(); n += 1 + n / 16) {
    const Bytes cut(good.begin(), good.begin() + n);
    EXPECT_THROW(decode_checkpoint<float>(cut), Error) << n;
  }
}

template <class T>
void train_state_round_trip() {
  auto model = build_model<T>(small_cfg());
  TrainState<T> st;
  st.config_text = "depth = 2\nlevels = 2\n";
  st.epochs_done = 3;
  st.params = parameter_values(model);
  st.adam = make_adam_state(model.parameters());
  st.adam.step = 36;
  for (auto& t : st.adam.m)
    for (std::size_t k = 0; k < t.size(); ++k) t.storage()[k] = T(0.001) * T(k % 7);
  for (auto& t : st.adam.v)
    for (std::size_t k = 0; k < t.size(); ++k) t.storage()[k] = T(1e-6) * T(k % 5);
  st.snapshots.capacity = 4;
  snapshot_update(st.snapshots, 0, -0.2, st.params);
  snapshot_update(st.snapshots, 1, -0.1, st.params);
  snapshot_update(st.snapshots, 2, -0.3, st.params);
  st.history = {{0, 1e-3, -0.1, -0.2, -1}, {1, 9e-4, -0.2, -0.1, 0}, {2, 8e-4, -0.3, -0.3, -1}};

  const auto back = decode_train_state<T>(encode_train_state(st));
  EXPECT_EQ(back.config_text, st.config_text);
  EXPECT_EQ(back.epochs_done, 3u);
  EXPECT_EQ(back.params, st.params);
  EXPECT_EQ(back.adam.step, 36u);
  EXPECT_EQ(back.adam.m, st.adam.m);
  EXPECT_EQ(back.adam.v, st.adam.v);
  EXPECT_EQ(back.adam.hyper.lr, st.adam.hyper.lr);
  EXPECT_EQ(back.snapshots.capacity, 4u);
  ASSERT_EQ(back.snapshots.entries.size(), st.snapshots.entries.size());
  for (std::size_t i = 0; i < st.snapshots.entries.size(); ++i) {
    EXPECT_EQ(back.snapshots.entries[i].epoch, st.snapshots.entries[i].epoch);
    EXPECT_EQ(back.snapshots.entries[i].params, st.snapshots.entries[i].params);
  }
  ASSERT_EQ(back.snapshots.pending.has_value(), st.snapshots.pending.has_value());
  EXPECT_EQ(back.snapshots.pending->epoch, 2u);
  EXPECT_EQ(back.snapshots.before_pending, st.snapshots.before_pending);
  EXPECT_EQ(back.history, st.history);
}

TEST(TrainStateFile, RoundTripFloat) { train_state_round_trip<float>(); }
TEST(TrainStateFile, RoundTripDouble) { train_state_round_trip<double>(); }

TEST(TrainStateFile, PrecisionMismatchIsRejected) {
  auto model = build_model<double>(small_cfg());
  TrainState<double> st;
  st.params = parameter_values(model);
  st.adam = make_adam_state(model.parameters());
  const auto bytes = encode_train_state(st);
  EXPECT_THROW(decode_train_state<float>(bytes), Error);
}
