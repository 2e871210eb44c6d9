#pragma once

// Patch-based training, tiled validation, and the full segmentation pipeline
// (resample -> clip/normalise -> tile -> infer -> threshold -> back to the
// acquisition grid).

#include <cmath>
#include <string>
#include <vector>

#include "uception/error.hpp"
#include "uception/metrics.hpp"
#include "uception/model.hpp"
#include "uception/optim.hpp"
#include "uception/rng.hpp"
#include "uception/volume.hpp"

namespace uception {

// A preprocessed image and its ground truth on the same grid.
struct Sample {
  std::string name;
  Volume image;
  BinaryMask truth;
};

struct BatchSpec {
  std::size_t batch = 2;
  std::size_t patch = 64;
  std::size_t steps = 0;  // optimizer steps per epoch; 0 = one per sample
  double min_fg_frac = 0.0;
  double smooth = 1.0;
  std::size_t max_draws = 50;  // attempts per patch under the foreground filter
};

inline void validate(const BatchSpec& b, std::size_t divisor) {
  if (b.batch == 0) throw Error(ErrorCode::InvalidArgument, "batch", "batch must be positive");
  if (b.patch == 0 || b.patch % divisor != 0) {
    throw Error(ErrorCode::InvalidArgument, "patch",
                "patch must be a positive multiple of " + std::to_string(divisor));
  }
  if (!(b.min_fg_frac >= 0.0 && b.min_fg_frac <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "min_fg_frac", "must lie in [0, 1]");
  }
  if (!(b.smooth >= 0.0)) throw Error(ErrorCode::InvalidArgument, "smooth", "must be >= 0");
}

template <class T, class V>
void copy_into_channel(Tensor5<T>& t, std::size_t n, const Grid<V>& g) {
  auto dst = t.channel(n, 0);
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] = static_cast<T>(g.data[i]);
}

template <class T>
Tensor5<T> volume_tensor(const Volume& v) {
  Tensor5<T> t(1, 1, v.extents.d, v.extents.h, v.extents.w);
  copy_into_channel(t, 0, v);
  return t;
}

template <class T>
Tensor5<T> mask_tensor(const BinaryMask& m) {
  Tensor5<T> t(1, 1, m.extents.d, m.extents.h, m.extents.w);
  copy_into_channel(t, 0, m);
  return t;
}

namespace detail {

inline std::size_t draw_origin(Rng& rng, std::size_t extent, std::size_t patch) {
  return extent > patch ? static_cast<std::size_t>(rng.below(extent - patch + 1)) : 0;
}

}  // namespace detail

struct PatchPair {
  Volume image;
  BinaryMask truth;
};

// Uniform random patch origin, optionally redrawn until the patch holds at
// least min_fg_frac foreground (the last draw is kept if none does).
inline PatchPair sample_patch(const Sample& s, const BatchSpec& spec, Rng& rng) {
  const Extent3 size = Extent3::cube(spec.patch);
  const double voxels = static_cast<double>(voxel_count(size));
  PatchPair out;
  const std::size_t draws = spec.min_fg_frac > 0.0 ? std::max<std::size_t>(spec.max_draws, 1) : 1;
  for (std::size_t k = 0; k < draws; ++k) {
    const Extent3 o{detail::draw_origin(rng, s.image.extents.d, spec.patch),
                    detail::draw_origin(rng, s.image.extents.h, spec.patch),
                    detail::draw_origin(rng, s.image.extents.w, spec.patch)};
    out.truth = extract_block(s.truth, o, size);
    if (static_cast<double>(count_foreground(out.truth)) / voxels >= spec.min_fg_frac ||
        k + 1 == draws) {
      out.image = extract_block(s.image, o, size);
      break;
    }
  }
  return out;
}

inline std::size_t steps_per_epoch(const BatchSpec& spec, std::size_t samples) {
  return spec.steps ? spec.steps : samples;
}

// One epoch at the schedule's current position (schedule.epochs_elapsed).
// Every random draw derives from (seed, epoch), so an epoch replays exactly
// no matter what ran before it.
template <class T>
double train_epoch(ModelGraph<T>& model, const std::vector<Sample>& data, const BatchSpec& spec,
                   AdamState<T>& state, const CyclicSchedule& schedule, std::uint64_t seed) {
  if (data.empty()) throw Error(ErrorCode::EmptyInput, "dataset", "no training samples");
  validate(spec, model.divisor());
  const std::size_t epoch = schedule.epochs_elapsed;
  const std::uint64_t epoch_seed = mix_seed(seed, epoch);
  Rng rng(epoch_seed);
  state.hyper.lr = cyclic_lr(schedule, epoch);

  const std::size_t steps = steps_per_epoch(spec, data.size());
  const std::size_t p = spec.patch;
  double total = 0.0;
  for (std::size_t step = 0; step < steps; ++step) {
    Tensor5<T> x(spec.batch, 1, p, p, p), y(spec.batch, 1, p, p, p);
    for (std::size_t b = 0; b < spec.batch; ++b) {
      const Sample& s = data[rng.below(data.size())];
      const PatchPair pp = sample_patch(s, spec, rng);
      copy_into_channel(x, b, pp.image);
      copy_into_channel(y, b, pp.truth);
    }
    const auto trace = forward_trace(model, x, Mode::Train, mix_seed(epoch_seed, 1000003 + step));
    const double loss = -soft_dice(trace.output(), y, spec.smooth);
    if (!std::isfinite(loss)) throw Error(ErrorCode::NonFinite, "loss", "training loss diverged");
    Tensor5<T> g = soft_dice_backward(trace.output(), y, spec.smooth);
    for (T& v : g.values()) v = -v;
    const auto grads = backward(model, trace, g);
    adam_step(model.parameters(), grads.params, state);
    total += loss;
  }
  return total / static_cast<double>(steps);
}

// Probability volume: zero-pad to whole patches, infer patch by patch,
// reassemble and crop back.
template <class T>
Volume predict_volume(const ModelGraph<T>& model, const Volume& image, std::size_t patch) {
  if (patch == 0 || patch % model.divisor() != 0) {
    throw Error(ErrorCode::InvalidArgument, "patch",
                "patch must be a positive multiple of " + std::to_string(model.divisor()));
  }
  Tiling tiles = tile_patches(image, patch);
  for (auto& t : tiles.patches) {
    const Tensor5<T> out = forward(model, volume_tensor<T>(t.data), Mode::Infer);
    const auto probs = out.values();
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data.data[i] = static_cast<float>(probs[i]);
  }
  return crop(reassemble(tiles.patches, tiles.padded_extents, image.spacing), image.extents);
}

inline BinaryMask threshold_probability(const Volume& prob, double threshold) {
  BinaryMask m(prob.extents, prob.spacing);
  for (std::size_t i = 0; i < prob.size(); ++i) m.data[i] = static_cast<double>(prob.data[i]) >= threshold;
  return m;
}

struct ValidationResult {
  double loss = 0.0;  // -soft_dice with smooth 0 over the whole volume
  SegReport report;
  Volume probability;
};

inline double soft_dice_volume(const Volume& prob, const BinaryMask& truth, double smooth = 0.0) {
  require_same_extents(prob.extents, truth.extents, "soft dice");
  return soft_dice(volume_tensor<float>(prob), mask_tensor<float>(truth), smooth);
}

template <class T>
ValidationResult validate(const ModelGraph<T>& model, const Volume& image, const BinaryMask& truth,
                          std::size_t patch, double threshold = 0.9) {
  require_same_extents(image.extents, truth.extents, "validate");
  ValidationResult r;
  r.probability = predict_volume(model, image, patch);
  r.loss = -soft_dice_volume(r.probability, truth, 0.0);
  r.report = evaluate_segmentation(threshold_probability(r.probability, threshold), truth);
  return r;
}

// ---------------------------------------------------------------------------

struct PreprocessOptions {
  Spacing target{1.0, 1.0, 1.0};
  double clip_percentile = 99.9;
};

inline Volume preprocess(const Volume& raw, const PreprocessOptions& opt = {}) {
  return clip_normalize(resample_trilinear(raw, opt.target), opt.clip_percentile).volume;
}

struct SegmentOptions {
  PreprocessOptions preprocess;
  std::size_t patch = 64;
  double threshold = 0.9;
};

// Mask on the raw volume's own grid.
template <class T>
BinaryMask segment_volume(const ModelGraph<T>& model, const Volume& raw,
                          const SegmentOptions& opt = {}) {
  const Volume prepared = preprocess(raw, opt.preprocess);
  const Volume prob = predict_volume(model, prepared, opt.patch);
  return resample_nearest(threshold_probability(prob, opt.threshold), raw.extents, raw.spacing);
}

}  // namespace uception
