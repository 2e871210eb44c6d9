#pragma once

// Soft Dice objective and its gradient, plus the evaluation metrics:
// hard Dice, sensitivity and the average Hausdorff distance.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "uception/error.hpp"
#include "uception/tensor.hpp"
#include "uception/volume.hpp"

namespace uception {

namespace detail {

template <class T>
void check_soft_pair(const Tensor5<T>& pred, const Tensor5<T>& truth) {
  require_same_shape(pred.shape(), truth.shape(), "soft dice");
  for (T v : truth.values()) {
    if (v != T(0) && v != T(1)) {
      throw Error(ErrorCode::InvalidArgument, "truth", "ground truth must be binary");
    }
  }
}

struct DiceSums {
  double intersection = 0.0;  // sum P*T
  double total = 0.0;         // sum P + sum T
};

template <class T>
DiceSums dice_sums(const Tensor5<T>& pred, const Tensor5<T>& truth) {
  DiceSums s;
  const T* p = pred.data();
  const T* t = truth.data();
  for (std::size_t i = 0; i < pred.size(); ++i) {
    s.intersection += static_cast<double>(p[i]) * static_cast<double>(t[i]);
    s.total += static_cast<double>(p[i]) + static_cast<double>(t[i]);
  }
  return s;
}

}  // namespace detail

// (2 sum(P*T) + smooth) / (sum P + sum T + smooth), over every voxel of the
// batch at once. Two empty inputs with smooth 0 count as perfect agreement.
template <class T>
double soft_dice(const Tensor5<T>& pred, const Tensor5<T>& truth, double smooth = 0.0) {
  detail::check_soft_pair(pred, truth);
  if (smooth < 0.0) throw Error(ErrorCode::InvalidArgument, "smooth", "smooth must be >= 0");
  const auto s = detail::dice_sums(pred, truth);
  const double den = s.total + smooth;
  if (den == 0.0) return 1.0;
  return (2.0 * s.intersection + smooth) / den;
}

// d soft_dice / d P
template <class T>
Tensor5<T> soft_dice_backward(const Tensor5<T>& pred, const Tensor5<T>& truth,
                              double smooth = 0.0) {
  detail::check_soft_pair(pred, truth);
  if (smooth < 0.0) throw Error(ErrorCode::InvalidArgument, "smooth", "smooth must be >= 0");
  const auto s = detail::dice_sums(pred, truth);
  const double den = s.total + smooth;
  Tensor5<T> g(pred.shape());
  if (den == 0.0) return g;
  const double num = 2.0 * s.intersection + smooth;
  const double inv = 1.0 / (den * den);
  const T* t = truth.data();
  T* out = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    out[i] = static_cast<T>((2.0 * static_cast<double>(t[i]) * den - num) * inv);
  }
  return g;
}

// ---------------------------------------------------------------------------
// Mask metrics

struct Confusion {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_extents(pred.extents, truth.extents, "confusion");
  Confusion c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.data[i] != 0;
    const bool t = truth.data[i] != 0;
    c.tp += p && t;
    c.fp += p && !t;
    c.fn += !p && t;
    c.tn += !p && !t;
  }
  return c;
}

inline double hard_dice(const Confusion& c) {
  const std::size_t den = 2 * c.tp + c.fp + c.fn;
  if (den == 0) return 1.0;
  return static_cast<double>(2 * c.tp) / static_cast<double>(den);
}

inline double hard_dice(const BinaryMask& pred, const BinaryMask& truth) {
  return hard_dice(confusion(pred, truth));
}

inline double sensitivity(const Confusion& c) {
  if (c.tp + c.fn == 0) {
    throw Error(ErrorCode::EmptyMask, "truth", "sensitivity is undefined for an empty ground truth");
  }
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

inline double sensitivity(const BinaryMask& pred, const BinaryMask& truth) {
  return sensitivity(confusion(pred, truth));
}

// ---------------------------------------------------------------------------
// Distance transform

namespace detail {

// One pass of the lower-envelope transform along a line of n samples:
// out[p] = min_q f[q] + w * (p - q)^2. Infinite samples are skipped.
inline void envelope_pass(const double* f, double* out, std::size_t n, double w,
                          std::vector<std::size_t>& v, std::vector<double>& z) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.resize(n);
  z.resize(n + 1);
  std::size_t k = 0;
  bool any = false;
  auto key = [&](std::size_t q) { return f[q] + w * static_cast<double>(q) * static_cast<double>(q); };
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == inf) continue;
    if (!any) {
      v[0] = q;
      z[0] = -inf;
      z[1] = inf;
      k = 0;
      any = true;
      continue;
    }
    auto cross = [&](std::size_t r) {
      return (key(q) - key(r)) / (2.0 * w * (static_cast<double>(q) - static_cast<double>(r)));
    };
    double s = cross(v[k]);
    while (s <= z[k]) s = cross(v[--k]);  // z[0] = -inf stops the walk
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = inf;
  }
  if (!any) {
    std::fill(out, out + n, inf);
    return;
  }
  k = 0;
  for (std::size_t p = 0; p < n; ++p) {
    while (z[k + 1] < static_cast<double>(p)) ++k;
    const double d = static_cast<double>(p) - static_cast<double>(v[k]);
    out[p] = f[v[k]] + w * d * d;
  }
}

}  // namespace detail

// Squared Euclidean distance (mm^2) from every voxel to the nearest
// foreground voxel of `mask`; +inf everywhere for an empty mask.
inline std::vector<double> squared_distance_transform(const BinaryMask& mask) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  const auto [D, H, W] = mask.extents;
  std::vector<double> g(mask.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = mask.data[i] ? 0.0 : inf;

  std::vector<std::size_t> v;
  std::vector<double> z, line(std::max({D, H, W})), out(line.size());
  const double sw = mask.spacing.w * mask.spacing.w;
  const double sh = mask.spacing.h * mask.spacing.h;
  const double sd = mask.spacing.d * mask.spacing.d;

  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t y = 0; y < H; ++y) {
      double* row = g.data() + mask.index(zz, y, 0);
      detail::envelope_pass(row, out.data(), W, sw, v, z);
      std::copy(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(W), row);
    }
  for (std::size_t zz = 0; zz < D; ++zz)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t y = 0; y < H; ++y) line[y] = g[mask.index(zz, y, x)];
      detail::envelope_pass(line.data(), out.data(), H, sh, v, z);
      for (std::size_t y = 0; y < H; ++y) g[mask.index(zz, y, x)] = out[y];
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      for (std::size_t zz = 0; zz < D; ++zz) line[zz] = g[mask.index(zz, y, x)];
      detail::envelope_pass(line.data(), out.data(), D, sd, v, z);
      for (std::size_t zz = 0; zz < D; ++zz) g[mask.index(zz, y, x)] = out[zz];
    }
  return g;
}

namespace detail {

inline void check_hausdorff_args(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_extents(pred.extents, truth.extents, "average hausdorff");
  if (count_foreground(pred) == 0) {
    throw Error(ErrorCode::EmptyMask, "pred", "average Hausdorff needs a non-empty prediction");
  }
  if (count_foreground(truth) == 0) {
    throw Error(ErrorCode::EmptyMask, "truth", "average Hausdorff needs a non-empty ground truth");
  }
}

// Mean over foreground voxels of `from` of sqrt(sq_dist), in raster order.
inline double directed_mean(const BinaryMask& from, const std::vector<double>& sq_dist) {
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (!from.data[i]) continue;
    sum += std::sqrt(sq_dist[i]);
    ++n;
  }
  return sum / static_cast<double>(n);
}

}  // namespace detail

// Symmetric mean of the two directed mean nearest-neighbour distances (mm).
// The physical spacing is taken from `spacing`, not from the masks.
inline double average_hausdorff(const BinaryMask& pred, const BinaryMask& truth,
                                const Spacing& spacing) {
  detail::check_hausdorff_args(pred, truth);
  validate_spacing(spacing);
  BinaryMask p = pred, t = truth;
  p.spacing = t.spacing = spacing;
  const double a = detail::directed_mean(p, squared_distance_transform(t));
  const double b = detail::directed_mean(t, squared_distance_transform(p));
  return 0.5 * (a + b);
}

inline double average_hausdorff(const BinaryMask& pred, const BinaryMask& truth) {
  return average_hausdorff(pred, truth, truth.spacing);
}

// O(|P| |T|) reference used for cross-checking on small masks.
inline double average_hausdorff_brute_force(const BinaryMask& pred, const BinaryMask& truth,
                                            const Spacing& spacing) {
  detail::check_hausdorff_args(pred, truth);
  validate_spacing(spacing);
  struct P3 {
    double z, y, x;
  };
  auto points = [&](const BinaryMask& m) {
    std::vector<P3> out;
    for (std::size_t z = 0; z < m.extents.d; ++z)
      for (std::size_t y = 0; y < m.extents.h; ++y)
        for (std::size_t x = 0; x < m.extents.w; ++x)
          if (m.at(z, y, x)) out.push_back({double(z), double(y), double(x)});
    return out;
  };
  const auto ps = points(pred), ts = points(truth);
  const double sd = spacing.d * spacing.d, sh = spacing.h * spacing.h, sw = spacing.w * spacing.w;
  auto directed = [&](const std::vector<P3>& a, const std::vector<P3>& b) {
    double sum = 0.0;
    for (const auto& p : a) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& q : b) {
        const double dz = p.z - q.z, dy = p.y - q.y, dx = p.x - q.x;
        best = std::min(best, sd * dz * dz + sh * dy * dy + sw * dx * dx);
      }
      sum += std::sqrt(best);
    }
    return sum / static_cast<double>(a.size());
  };
  return 0.5 * (directed(ps, ts) + directed(ts, ps));
}

// ---------------------------------------------------------------------------

struct SegReport {
  double dice = 0.0;
  double sensitivity = 0.0;
  double avg_hausdorff_mm = 0.0;  // +inf when the prediction is empty
  Spacing voxel_spacing{};
};

// Scores a prediction against a non-empty ground truth on the truth's grid.
inline SegReport evaluate_segmentation(const BinaryMask& pred, const BinaryMask& truth) {
  const Confusion c = confusion(pred, truth);
  SegReport r;
  r.voxel_spacing = truth.spacing;
  r.dice = hard_dice(c);
  r.sensitivity = sensitivity(c);
  r.avg_hausdorff_mm = c.tp + c.fp == 0 ? std::numeric_limits<double>::infinity()
                                        : average_hausdorff(pred, truth, truth.spacing);
  return r;
}

}  // namespace uception
