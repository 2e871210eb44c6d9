#pragma once

// Model checkpoints (UCPT) and resumable training state (UTST). Both formats
// are little-endian and documented in docs/formats.md.

#include <optional>
#include <string>
#include <vector>

#include "uception/error.hpp"
#include "uception/io.hpp"
#include "uception/model.hpp"
#include "uception/optim.hpp"

namespace uception {

inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint32_t kTrainStateVersion = 1;

struct CheckpointMeta {
  ModelCfg cfg;
  std::size_t patch = 64;  // patch size the model was trained with
  std::size_t epoch = 0;
};

namespace detail {

template <class T>
void put_reals(ByteWriter& w, std::span<const T> values) {
  w.put_array(values);
}

// Reads `out.size()` reals stored with `real_bytes` bytes each.
template <class T>
void get_reals(ByteReader& r, std::span<T> out, std::uint32_t real_bytes) {
  if (real_bytes == sizeof(T)) {
    r.get_array(out);
  } else if (real_bytes == 4) {
    std::vector<float> tmp(out.size());
    r.get_array(std::span<float>(tmp));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(tmp[i]);
  } else {
    std::vector<double> tmp(out.size());
    r.get_array(std::span<double>(tmp));
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(tmp[i]);
  }
}

inline void put_cfg(ByteWriter& w, const ModelCfg& c) {
  w.put<std::uint32_t>(static_cast<std::uint32_t>(c.arch));
  w.put<std::uint64_t>(c.depth);
  w.put<std::uint64_t>(c.levels);
  w.put<double>(c.dropout_rate);
  w.put<std::uint64_t>(c.input_channels);
  w.put<std::uint64_t>(c.output_channels);
  w.put<std::uint64_t>(c.unet_width);
  w.put<std::uint64_t>(c.init_seed);
}

inline ModelCfg get_cfg(ByteReader& r) {
  ModelCfg c;
  const auto arch = r.get<std::uint32_t>();
  if (arch > static_cast<std::uint32_t>(Arch::UNet3d)) {
    throw Error(ErrorCode::MalformedHeader, "arch", "unknown architecture id " + std::to_string(arch));
  }
  c.arch = static_cast<Arch>(arch);
  c.depth = r.get<std::uint64_t>();
  c.levels = r.get<std::uint64_t>();
  c.dropout_rate = r.get<double>();
  c.input_channels = r.get<std::uint64_t>();
  c.output_channels = r.get<std::uint64_t>();
  c.unet_width = r.get<std::uint64_t>();
  c.init_seed = r.get<std::uint64_t>();
  // Guard the rebuild against absurd values from a damaged file.
  if (c.depth == 0 || c.depth > 4096 || c.levels > 8 || c.input_channels > 4096 ||
      c.output_channels > 4096 || c.unet_width > 1 << 16) {
    throw Error(ErrorCode::MalformedHeader, "cfg", "model configuration out of range");
  }
  return c;
}

inline std::uint32_t get_real_bytes(ByteReader& r) {
  const auto b = r.get<std::uint32_t>();
  if (b != 4 && b != 8) throw Error(ErrorCode::MalformedHeader, "real_bytes", "must be 4 or 8");
  return b;
}

inline void expect_magic(ByteReader& r, std::string_view magic, std::uint32_t version) {
  if (r.remaining() < magic.size() || r.get_bytes(magic.size()) != magic) {
    throw Error(ErrorCode::BadMagic, std::string(magic), "not a " + std::string(magic) + " file");
  }
  const auto v = r.get<std::uint32_t>();
  if (v != version) {
    throw Error(ErrorCode::MalformedHeader, "version", "unsupported version " + std::to_string(v));
  }
}

template <class T>
void put_tensors(ByteWriter& w, const std::vector<Tensor5<T>>& ts) {
  for (const auto& t : ts) put_reals(w, std::span<const T>(t.storage()));
}

template <class T>
void get_tensors(ByteReader& r, std::vector<Tensor5<T>>& ts, std::uint32_t real_bytes) {
  for (auto& t : ts) get_reals(r, std::span<T>(t.storage()), real_bytes);
}

// Tensors shaped like the model's parameters.
template <class T>
std::vector<Tensor5<T>> like_parameters(const ModelGraph<T>& m) {
  std::vector<Tensor5<T>> out;
  for (const auto& p : m.parameters()) out.emplace_back(p.value.shape());
  return out;
}

}  // namespace detail

// "UCPT" u32 version, u32 bytes-per-real, model cfg, u64 patch, u64 epoch,
// u32 parameter count, then per parameter: name, five u64 extents, reals.
template <class T>
Bytes encode_checkpoint(const ModelGraph<T>& model, const CheckpointMeta& meta) {
  ByteWriter w;
  w.put_bytes("UCPT");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(sizeof(T));
  detail::put_cfg(w, model.cfg());
  w.put<std::uint64_t>(meta.patch);
  w.put<std::uint64_t>(meta.epoch);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(model.parameters().size()));
  for (const auto& p : model.parameters()) {
    w.put_string(p.name);
    const Shape5 s = p.value.shape();
    for (std::size_t e : {s.n, s.c, s.d, s.h, s.w}) w.put<std::uint64_t>(e);
    detail::put_reals(w, std::span<const T>(p.value.storage()));
  }
  return w.take();
}

// Bytes per real stored in a checkpoint (4 or 8), without decoding it.
inline std::uint32_t checkpoint_real_bytes(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "checkpoint");
  detail::expect_magic(r, "UCPT", kCheckpointVersion);
  return detail::get_real_bytes(r);
}

// Rebuilds the architecture from the stored cfg and loads the weights,
// converting precision if needed. Names and shapes must match exactly.
template <class T>
ModelGraph<T> decode_checkpoint(std::span<const std::uint8_t> bytes, CheckpointMeta* meta = nullptr) {
  ByteReader r(bytes, "checkpoint");
  detail::expect_magic(r, "UCPT", kCheckpointVersion);
  const auto real_bytes = detail::get_real_bytes(r);
  CheckpointMeta m;
  m.cfg = detail::get_cfg(r);
  m.patch = r.get<std::uint64_t>();
  m.epoch = r.get<std::uint64_t>();
  ModelGraph<T> model = build_model<T>(m.cfg);
  const auto count = r.get<std::uint32_t>();
  if (count != model.parameters().size()) {
    throw Error(ErrorCode::ShapeMismatch, "parameters",
                "checkpoint holds " + std::to_string(count) + " parameters, model has " +
                    std::to_string(model.parameters().size()));
  }
  for (auto& p : model.parameters()) {
    const std::string name = r.get_string(1024);
    if (name != p.name) {
      throw Error(ErrorCode::ShapeMismatch, name, "expected parameter " + p.name);
    }
    std::uint64_t e[5];
    for (auto& x : e) x = r.get<std::uint64_t>();
    const Shape5 s{e[0], e[1], e[2], e[3], e[4]};
    if (s != p.value.shape()) {
      throw Error(ErrorCode::ShapeMismatch, name, "stored shape " + s.str() + " vs " + p.value.shape().str());
    }
    detail::get_reals(r, std::span<T>(p.value.storage()), real_bytes);
    if (!p.value.all_finite()) throw Error(ErrorCode::NonFinite, name, "non-finite weight");
  }
  if (r.remaining() != 0) throw Error(ErrorCode::PayloadLength, "checkpoint", "trailing bytes");
  if (meta) *meta = m;
  return model;
}

// ---------------------------------------------------------------------------
// Training state

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  std::int64_t captured = -1;  // epoch stored in the snapshot set at this step, or -1

  bool operator==(const EpochRecord&) const = default;
};

template <class T>
struct TrainState {
  std::string config_text;  // the config the run started with
  std::size_t epochs_done = 0;
  std::vector<Tensor5<T>> params;
  AdamState<T> adam;
  SnapshotSet<T> snapshots;
  std::vector<EpochRecord> history;
};

namespace detail {

template <class T>
void put_snapshot(ByteWriter& w, const Snapshot<T>& s) {
  w.put<std::uint64_t>(s.epoch);
  w.put<double>(s.val_loss);
  put_tensors(w, s.params);
}

template <class T>
Snapshot<T> get_snapshot(ByteReader& r, const std::vector<Tensor5<T>>& shape_like,
                         std::uint32_t real_bytes) {
  Snapshot<T> s;
  s.epoch = r.get<std::uint64_t>();
  s.val_loss = r.get<double>();
  s.params = shape_like;
  get_tensors(r, s.params, real_bytes);
  return s;
}

}  // namespace detail

template <class T>
Bytes encode_train_state(const TrainState<T>& st) {
  ByteWriter w;
  w.put_bytes("UTST");
  w.put<std::uint32_t>(kTrainStateVersion);
  w.put<std::uint32_t>(sizeof(T));
  w.put_string(st.config_text);
  w.put<std::uint64_t>(st.epochs_done);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(st.params.size()));
  for (const auto& p : st.params) {
    const Shape5 s = p.shape();
    for (std::size_t e : {s.n, s.c, s.d, s.h, s.w}) w.put<std::uint64_t>(e);
  }
  detail::put_tensors(w, st.params);
  w.put<std::uint64_t>(st.adam.step);
  for (double h : {st.adam.hyper.lr, st.adam.hyper.beta1, st.adam.hyper.beta2, st.adam.hyper.eps}) w.put<double>(h);
  detail::put_tensors(w, st.adam.m);
  detail::put_tensors(w, st.adam.v);

  const auto& ss = st.snapshots;
  w.put<std::uint64_t>(ss.capacity);
  w.put<std::uint64_t>(ss.entries.size());
  for (const auto& e : ss.entries) detail::put_snapshot(w, e);
  w.put<std::uint8_t>(ss.pending.has_value());
  if (ss.pending) detail::put_snapshot(w, *ss.pending);
  w.put<std::uint8_t>(ss.before_pending.has_value());
  if (ss.before_pending) w.put<double>(*ss.before_pending);

  w.put<std::uint64_t>(st.history.size());
  for (const auto& h : st.history) {
    w.put<std::uint64_t>(h.epoch);
    w.put<double>(h.lr);
    w.put<double>(h.train_loss);
    w.put<double>(h.val_loss);
    w.put<std::int64_t>(h.captured);
  }
  return w.take();
}

template <class T>
TrainState<T> decode_train_state(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "train state");
  detail::expect_magic(r, "UTST", kTrainStateVersion);
  const auto real_bytes = detail::get_real_bytes(r);
  if (real_bytes != sizeof(T)) {
    throw Error(ErrorCode::InvalidArgument, "precision",
                "training state was written with " + std::to_string(8 * real_bytes) + "-bit reals");
  }
  TrainState<T> st;
  st.config_text = r.get_string(1 << 20);
  st.epochs_done = r.get<std::uint64_t>();
  const auto count = r.get<std::uint32_t>();
  if (count > 100000) throw Error(ErrorCode::MalformedHeader, "parameters", "count out of range");
  std::vector<Tensor5<T>> shapes;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint64_t e[5];
    for (auto& x : e) x = r.get<std::uint64_t>();
    std::uint64_t total = 1;
    bool overflow = false;
    for (auto x : e) overflow |= __builtin_mul_overflow(total, x, &total);
    if (overflow || total > r.remaining()) {
      throw Error(ErrorCode::PayloadLength, "parameters", "shape exceeds file size");
    }
    shapes.emplace_back(Shape5{e[0], e[1], e[2], e[3], e[4]});
  }
  st.params = shapes;
  detail::get_tensors(r, st.params, real_bytes);
  st.adam.step = r.get<std::uint64_t>();
  st.adam.hyper.lr = r.get<double>();
  st.adam.hyper.beta1 = r.get<double>();
  st.adam.hyper.beta2 = r.get<double>();
  st.adam.hyper.eps = r.get<double>();
  st.adam.m = shapes;
  st.adam.v = shapes;
  detail::get_tensors(r, st.adam.m, real_bytes);
  detail::get_tensors(r, st.adam.v, real_bytes);

  auto& ss = st.snapshots;
  ss.capacity = r.get<std::uint64_t>();
  const auto n = r.get<std::uint64_t>();
  if (n > ss.capacity || ss.capacity > 1000) {
    throw Error(ErrorCode::MalformedHeader, "snapshots", "snapshot count out of range");
  }
  for (std::uint64_t i = 0; i < n; ++i) ss.entries.push_back(detail::get_snapshot(r, shapes, real_bytes));
  if (r.get<std::uint8_t>()) ss.pending = detail::get_snapshot(r, shapes, real_bytes);
  if (r.get<std::uint8_t>()) ss.before_pending = r.get<double>();

  const auto hn = r.get<std::uint64_t>();
  if (hn > r.remaining()) throw Error(ErrorCode::PayloadLength, "history", "truncated");
  for (std::uint64_t i = 0; i < hn; ++i) {
    EpochRecord h;
    h.epoch = r.get<std::uint64_t>();
    h.lr = r.get<double>();
    h.train_loss = r.get<double>();
    h.val_loss = r.get<double>();
    h.captured = r.get<std::int64_t>();
    st.history.push_back(h);
  }
  if (r.remaining() != 0) throw Error(ErrorCode::PayloadLength, "train state", "trailing bytes");
  return st;
}

}  // namespace uception
