#pragma once

// Scalar volumes with physical spacing, binary masks, and the preprocessing
// chain applied before a volume reaches the network: isotropic trilinear
// resampling, percentile clipping + max normalisation, and patch tiling.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "uception/error.hpp"
#include "uception/tensor.hpp"

namespace uception {

// Voxel spacing in millimetres along (depth, height, width).
struct Spacing {
  double d = 1.0, h = 1.0, w = 1.0;
  bool operator==(const Spacing&) const = default;
  static constexpr Spacing isotropic(double s) { return {s, s, s}; }
};

inline std::size_t voxel_count(const Extent3& e) { return e.d * e.h * e.w; }

inline void validate_spacing(const Spacing& s) {
  for (auto [v, name] : {std::pair{s.d, "depth"}, std::pair{s.h, "height"},
                         std::pair{s.w, "width"}}) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw Error(ErrorCode::InvalidArgument, name, "spacing must be positive and finite");
    }
  }
}

template <class V>
struct Grid {
  Extent3 extents{0, 0, 0};
  Spacing spacing{};
  std::vector<V> data;

  Grid() = default;
  Grid(Extent3 e, Spacing s, V fill = V(0)) : extents(e), spacing(s), data(voxel_count(e), fill) {
    validate_spacing(s);
  }
  Grid(Extent3 e, Spacing s, std::vector<V> values)
      : extents(e), spacing(s), data(std::move(values)) {
    validate_spacing(s);
    if (data.size() != voxel_count(e)) {
      throw Error(ErrorCode::ShapeMismatch, "data", "voxel buffer does not match extents");
    }
  }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  std::size_t index(std::size_t z, std::size_t y, std::size_t x) const {
    return (z * extents.h + y) * extents.w + x;
  }
  V& at(std::size_t z, std::size_t y, std::size_t x) { return data[index(z, y, x)]; }
  V at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }

  bool operator==(const Grid&) const = default;
};

using Volume = Grid<float>;
using BinaryMask = Grid<std::uint8_t>;

inline std::size_t count_foreground(const BinaryMask& m) {
  return static_cast<std::size_t>(std::count(m.data.begin(), m.data.end(), std::uint8_t{1}));
}

inline void require_same_extents(const Extent3& a, const Extent3& b, const std::string& what) {
  for (auto [x, y, name] : {std::tuple{a.d, b.d, "depth"}, std::tuple{a.h, b.h, "height"},
                            std::tuple{a.w, b.w, "width"}}) {
    if (x != y) {
      throw Error(ErrorCode::ShapeMismatch, name,
                  what + ": extent " + std::to_string(x) + " vs " + std::to_string(y));
    }
  }
}

// Foreground where value > threshold; ground-truth masks ingest through here.
inline BinaryMask binarize(const Volume& v, float threshold = 0.5f) {
  BinaryMask m(v.extents, v.spacing);
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = v.data[i] > threshold ? 1 : 0;
  return m;
}

inline Volume to_volume(const BinaryMask& m) {
  Volume v(m.extents, m.spacing);
  for (std::size_t i = 0; i < m.size(); ++i) v.data[i] = m.data[i] ? 1.0f : 0.0f;
  return v;
}

// ---------------------------------------------------------------------------
// Resampling

inline std::size_t resampled_extent(std::size_t n, double spacing, double target) {
  return static_cast<std::size_t>(std::llround(static_cast<double>(n) * spacing / target));
}

namespace detail {

// Source coordinate (in voxel units, clamped to the grid) of the centre of
// output voxel i.
inline double source_coord(std::size_t i, double target, double spacing, std::size_t n) {
  const double c = (static_cast<double>(i) + 0.5) * target / spacing - 0.5;
  return std::clamp(c, 0.0, static_cast<double>(n - 1));
}

struct LerpTap {
  std::size_t i0, i1;
  double t;
};

inline LerpTap lerp_tap(double c, std::size_t n) {
  const auto i0 = static_cast<std::size_t>(std::floor(c));
  const std::size_t i1 = std::min(i0 + 1, n - 1);
  return {i0, i1, c - static_cast<double>(i0)};
}

}  // namespace detail

// Output extents round(n * spacing / target); every output voxel is the
// trilinear interpolant at its physical centre, clamped to the edge.
inline Volume resample_trilinear(const Volume& in, const Spacing& target) {
  validate_spacing(target);
  if (in.empty()) throw Error(ErrorCode::EmptyInput, "volume", "cannot resample an empty volume");
  const Extent3 out_e{resampled_extent(in.extents.d, in.spacing.d, target.d),
                      resampled_extent(in.extents.h, in.spacing.h, target.h),
                      resampled_extent(in.extents.w, in.spacing.w, target.w)};
  for (auto [e, name] : {std::pair{out_e.d, "depth"}, std::pair{out_e.h, "height"},
                         std::pair{out_e.w, "width"}}) {
    if (e == 0) throw Error(ErrorCode::InvalidArgument, name, "resampling yields zero extent");
  }
  Volume out(out_e, target);
  std::vector<detail::LerpTap> tz(out_e.d), ty(out_e.h), tx(out_e.w);
  for (std::size_t i = 0; i < out_e.d; ++i)
    tz[i] = detail::lerp_tap(detail::source_coord(i, target.d, in.spacing.d, in.extents.d),
                             in.extents.d);
  for (std::size_t i = 0; i < out_e.h; ++i)
    ty[i] = detail::lerp_tap(detail::source_coord(i, target.h, in.spacing.h, in.extents.h),
                             in.extents.h);
  for (std::size_t i = 0; i < out_e.w; ++i)
    tx[i] = detail::lerp_tap(detail::source_coord(i, target.w, in.spacing.w, in.extents.w),
                             in.extents.w);

  // std::lerp is exact at t = 0 and bounded by its endpoints, so identical
  // spacing reproduces the input and the value range never grows.
  auto row = [&](std::size_t z, std::size_t y, const detail::LerpTap& t) {
    return std::lerp(static_cast<double>(in.at(z, y, t.i0)), static_cast<double>(in.at(z, y, t.i1)),
                     t.t);
  };
  for (std::size_t z = 0; z < out_e.d; ++z)
    for (std::size_t y = 0; y < out_e.h; ++y)
      for (std::size_t x = 0; x < out_e.w; ++x) {
        const auto& a = tz[z];
        const auto& b = ty[y];
        const auto& c = tx[x];
        const double v00 = std::lerp(row(a.i0, b.i0, c), row(a.i0, b.i1, c), b.t);
        const double v11 = std::lerp(row(a.i1, b.i0, c), row(a.i1, b.i1, c), b.t);
        out.at(z, y, x) = static_cast<float>(std::lerp(v00, v11, a.t));
      }
  return out;
}

// Nearest-neighbour resampling of a mask onto an explicit target grid; used
// to bring a segmentation back to the acquisition grid.
inline BinaryMask resample_nearest(const BinaryMask& in, Extent3 target_extents,
                                   const Spacing& target_spacing) {
  validate_spacing(target_spacing);
  if (in.empty()) throw Error(ErrorCode::EmptyInput, "mask", "cannot resample an empty mask");
  BinaryMask out(target_extents, target_spacing);
  auto pick = [](std::size_t i, double t, double s, std::size_t n) {
    const double c = (static_cast<double>(i) + 0.5) * t / s;
    const auto k = static_cast<std::ptrdiff_t>(std::floor(c));
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(k, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t z = 0; z < target_extents.d; ++z) {
    const auto sz = pick(z, target_spacing.d, in.spacing.d, in.extents.d);
    for (std::size_t y = 0; y < target_extents.h; ++y) {
      const auto sy = pick(y, target_spacing.h, in.spacing.h, in.extents.h);
      for (std::size_t x = 0; x < target_extents.w; ++x) {
        out.at(z, y, x) = in.at(sz, sy, pick(x, target_spacing.w, in.spacing.w, in.extents.w));
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Intensity normalisation

// Nearest-rank percentile: the ceil(p/100 * N)-th smallest value.
inline float percentile(std::vector<float> values, double pct) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "volume", "percentile of nothing");
  if (!(pct > 0.0 && pct <= 100.0)) {
    throw Error(ErrorCode::InvalidArgument, "percentile", "percentile must lie in (0, 100]");
  }
  const double n = static_cast<double>(values.size());
  // The epsilon absorbs representation error in pct (99.9 * 1000 / 100 is
  // not exactly 999 in binary).
  auto rank = static_cast<std::size_t>(std::ceil(pct * n / 100.0 - 1e-9));
  rank = std::clamp<std::size_t>(rank, 1, values.size());
  auto nth = values.begin() + static_cast<std::ptrdiff_t>(rank - 1);
  std::nth_element(values.begin(), nth, values.end());
  return *nth;
}

struct NormalizeResult {
  Volume volume;
  bool degenerate = false;  // max <= 0: returned unchanged
};

// Clip at the given upper percentile, then divide by the post-clip maximum.
inline NormalizeResult clip_normalize(const Volume& in, double clip_percentile = 99.9) {
  if (in.empty()) throw Error(ErrorCode::EmptyInput, "volume", "cannot normalise an empty volume");
  const float clip = percentile(in.data, clip_percentile);
  Volume out = in;
  float peak = -std::numeric_limits<float>::infinity();
  for (float& v : out.data) {
    v = std::min(v, clip);
    peak = std::max(peak, v);
  }
  if (!(peak > 0.0f)) return {in, true};
  for (float& v : out.data) v /= peak;
  return {std::move(out), false};
}

// mask = value >= fraction * max(volume)
inline BinaryMask threshold_baseline(const Volume& v, double fraction = 0.70) {
  if (v.empty()) throw Error(ErrorCode::EmptyInput, "volume", "cannot threshold an empty volume");
  const float peak = *std::max_element(v.data.begin(), v.data.end());
  const double cut = fraction * static_cast<double>(peak);
  BinaryMask m(v.extents, v.spacing);
  for (std::size_t i = 0; i < v.size(); ++i) m.data[i] = static_cast<double>(v.data[i]) >= cut;
  return m;
}

// ---------------------------------------------------------------------------
// Patches

inline std::size_t round_up(std::size_t n, std::size_t multiple) {
  return (n + multiple - 1) / multiple * multiple;
}

// Copies the cube [origin, origin+size) out of v; voxels outside v are zero.
template <class V>
Grid<V> extract_block(const Grid<V>& v, Extent3 origin, Extent3 size) {
  Grid<V> out(size, v.spacing);
  for (std::size_t z = 0; z < size.d && origin.d + z < v.extents.d; ++z)
    for (std::size_t y = 0; y < size.h && origin.h + y < v.extents.h; ++y) {
      const std::size_t n = std::min(size.w, v.extents.w > origin.w ? v.extents.w - origin.w : 0);
      const V* src = v.data.data() + v.index(origin.d + z, origin.h + y, origin.w);
      std::copy(src, src + n, out.data.data() + out.index(z, y, 0));
    }
  return out;
}

template <class V>
void insert_block(Grid<V>& dst, Extent3 origin, const Grid<V>& block) {
  for (std::size_t z = 0; z < block.extents.d && origin.d + z < dst.extents.d; ++z)
    for (std::size_t y = 0; y < block.extents.h && origin.h + y < dst.extents.h; ++y) {
      const std::size_t n =
          std::min(block.extents.w, dst.extents.w > origin.w ? dst.extents.w - origin.w : 0);
      const V* src = block.data.data() + block.index(z, y, 0);
      std::copy(src, src + n, dst.data.data() + dst.index(origin.d + z, origin.h + y, origin.w));
    }
}

// Zero-pads at the high end of every axis up to a multiple of `patch`.
template <class V>
Grid<V> pad_to_multiple(const Grid<V>& v, std::size_t patch) {
  const Extent3 padded{round_up(v.extents.d, patch), round_up(v.extents.h, patch),
                       round_up(v.extents.w, patch)};
  Grid<V> out(padded, v.spacing);
  insert_block(out, {0, 0, 0}, v);
  return out;
}

template <class V>
Grid<V> crop(const Grid<V>& v, Extent3 extents) {
  return extract_block(v, {0, 0, 0}, extents);
}

struct Patch {
  Extent3 origin;
  Volume data;
};

struct Tiling {
  Extent3 padded_extents;
  std::vector<Patch> patches;  // raster order (depth slowest)
};

// Non-overlapping partition of the zero-padded volume into patch^3 cubes.
inline Tiling tile_patches(const Volume& v, std::size_t patch = 64) {
  if (patch == 0) throw Error(ErrorCode::InvalidArgument, "patch", "patch size must be positive");
  if (v.empty()) throw Error(ErrorCode::EmptyInput, "volume", "cannot tile an empty volume");
  Tiling t;
  t.padded_extents = {round_up(v.extents.d, patch), round_up(v.extents.h, patch),
                      round_up(v.extents.w, patch)};
  const Extent3 size = Extent3::cube(patch);
  for (std::size_t z = 0; z < t.padded_extents.d; z += patch)
    for (std::size_t y = 0; y < t.padded_extents.h; y += patch)
      for (std::size_t x = 0; x < t.padded_extents.w; x += patch)
        t.patches.push_back({{z, y, x}, extract_block(v, {z, y, x}, size)});
  return t;
}

inline Volume reassemble(const std::vector<Patch>& patches, Extent3 extents,
                         Spacing spacing = {}) {
  Volume out(extents, spacing);
  for (const auto& p : patches) insert_block(out, p.origin, p.data);
  return out;
}

}  // namespace uception
