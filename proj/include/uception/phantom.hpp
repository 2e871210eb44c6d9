#pragma once

// Synthetic vessel phantoms: random-walk tubes of varying radius, rendered
// bright on a smooth background with Gaussian noise. Each tube gets its own
// brightness, and compact bright blobs (not vessels) are scattered around,
// so that a global intensity threshold both misses and over-segments.

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "uception/error.hpp"
#include "uception/rng.hpp"
#include "uception/volume.hpp"

namespace uception {

struct PhantomSpec {
  Extent3 extents{64, 64, 64};
  Spacing spacing{};
  std::size_t tubes = 6;
  double radius_min = 1.25;  // voxels
  double radius_max = 2.5;
  double step = 0.5;         // random-walk step length, voxels
  double curvature = 0.12;   // std-dev of the per-step direction jitter
  double noise = 0.05;       // Gaussian noise std-dev
  double background = 0.25;  // peak of the smooth background field
  double intensity_min = 0.35;
  double intensity_max = 1.0;
  std::size_t blobs = 5;  // bright non-vessel ellipsoids
  double blob_radius_min = 2.5;
  double blob_radius_max = 4.5;
  double blob_intensity_min = 0.6;
  double blob_intensity_max = 1.1;
  bool axis_aligned = false;  // straight tubes along the depth axis
  std::uint64_t seed = 0;
  double max_foreground = 0.05;
};

struct Phantom {
  Volume image;
  BinaryMask truth;
};

inline void validate(const PhantomSpec& s) {
  auto bad = [](const char* what, const char* why) {
    throw Error(ErrorCode::InvalidArgument, what, why);
  };
  if (s.extents.d < 4 || s.extents.h < 4 || s.extents.w < 4) bad("extents", "each extent must be >= 4");
  if (s.tubes == 0) bad("tubes", "at least one tube is required");
  if (!(s.radius_min > 0.0) || !(s.radius_max >= s.radius_min)) bad("radius", "need 0 < min <= max");
  if (!(s.step > 0.0)) bad("step", "step must be positive");
  if (!(s.curvature >= 0.0)) bad("curvature", "curvature must be >= 0");
  if (!(s.noise >= 0.0)) bad("noise", "noise must be >= 0");
  if (!(s.background >= 0.0)) bad("background", "background must be >= 0");
  if (!(s.intensity_min > 0.0) || !(s.intensity_max >= s.intensity_min)) {
    bad("intensity", "need 0 < min <= max");
  }
  if (s.blobs > 0 && (!(s.blob_radius_min > 0.0) || !(s.blob_radius_max >= s.blob_radius_min) ||
                      !(s.blob_intensity_max >= s.blob_intensity_min))) {
    bad("blobs", "need 0 < radius min <= max and intensity min <= max");
  }
  validate_spacing(s.spacing);
}

namespace detail {

using Vec3 = std::array<double, 3>;  // (z, y, x) in voxel units, centres at integers

inline void stamp_ball(const Vec3& c, double r, float value, BinaryMask& truth,
                       std::vector<float>& level) {
  const auto& e = truth.extents;
  const std::array<std::size_t, 3> ext{e.d, e.h, e.w};
  std::array<long, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max(0L, static_cast<long>(std::ceil(c[a] - r)));
    hi[a] = std::min(static_cast<long>(ext[a]) - 1, static_cast<long>(std::floor(c[a] + r)));
  }
  const double r2 = r * r;
  for (long z = lo[0]; z <= hi[0]; ++z)
    for (long y = lo[1]; y <= hi[1]; ++y)
      for (long x = lo[2]; x <= hi[2]; ++x) {
        const double dz = double(z) - c[0], dy = double(y) - c[1], dx = double(x) - c[2];
        if (dz * dz + dy * dy + dx * dx > r2) continue;
        const auto i = truth.index(std::size_t(z), std::size_t(y), std::size_t(x));
        truth.data[i] = 1;
        level[i] = std::max(level[i], value);
      }
}

inline bool inside(const Vec3& p, const Extent3& e, double margin) {
  return p[0] >= -margin && p[1] >= -margin && p[2] >= -margin &&
         p[0] <= double(e.d) - 1 + margin && p[1] <= double(e.h) - 1 + margin &&
         p[2] <= double(e.w) - 1 + margin;
}

inline Vec3 normalized(Vec3 v) {
  const double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
  return {v[0] / n, v[1] / n, v[2] / n};
}

inline Vec3 random_direction(Rng& rng) {
  while (true) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if (n2 > 1e-6) return normalized(v);
  }
}

}  // namespace detail

inline Phantom generate_phantom(const PhantomSpec& spec) {
  validate(spec);
  const Extent3 e = spec.extents;
  Phantom ph{Volume(e, spec.spacing), BinaryMask(e, spec.spacing)};
  std::vector<float> level(voxel_count(e), 0.0f);

  Rng tubes(mix_seed(spec.seed, 1));
  const std::size_t max_steps =
      static_cast<std::size_t>(4.0 * double(e.d + e.h + e.w) / spec.step) + 1;
  for (std::size_t t = 0; t < spec.tubes; ++t) {
    const auto brightness =
        static_cast<float>(tubes.uniform(spec.intensity_min, spec.intensity_max));
    double radius = tubes.uniform(spec.radius_min, spec.radius_max);

    if (spec.axis_aligned) {
      const double m = std::ceil(spec.radius_max) + 1.0;
      const double cy = std::round(tubes.uniform(m, double(e.h) - 1.0 - m));
      const double cx = std::round(tubes.uniform(m, double(e.w) - 1.0 - m));
      for (double z = 0.0; z <= double(e.d) - 1.0; z += spec.step)
        detail::stamp_ball({z, cy, cx}, radius, brightness, ph.truth, level);
      continue;
    }

    const detail::Vec3 start{tubes.uniform(0.2, 0.8) * double(e.d - 1),
                             tubes.uniform(0.2, 0.8) * double(e.h - 1),
                             tubes.uniform(0.2, 0.8) * double(e.w - 1)};
    const detail::Vec3 dir0 = detail::random_direction(tubes);
    const double r0 = radius;
    for (double sign : {1.0, -1.0}) {
      detail::Vec3 p = start;
      detail::Vec3 dir{sign * dir0[0], sign * dir0[1], sign * dir0[2]};
      radius = r0;
      for (std::size_t k = 0; k < max_steps && detail::inside(p, e, radius); ++k) {
        detail::stamp_ball(p, radius, brightness, ph.truth, level);
        for (int a = 0; a < 3; ++a) dir[a] += spec.curvature * tubes.normal();
        dir = detail::normalized(dir);
        radius = std::clamp(radius + 0.05 * tubes.normal(), spec.radius_min, spec.radius_max);
        for (int a = 0; a < 3; ++a) p[a] += spec.step * dir[a];
      }
    }
  }

  const std::size_t fg = count_foreground(ph.truth);
  const double frac = double(fg) / double(voxel_count(e));
  if (frac >= spec.max_foreground) {
    throw Error(ErrorCode::Sparseness, "foreground",
                "phantom foreground fraction " + std::to_string(frac) + " is not sparse");
  }

  // Smooth background: a few low-frequency plane waves, scaled into
  // [0, background].
  Rng field(mix_seed(spec.seed, 2));
  struct Wave {
    double fz, fy, fx, phase;
  };
  std::array<Wave, 3> waves{};
  for (auto& w : waves)
    w = {field.uniform(0.3, 1.5), field.uniform(0.3, 1.5), field.uniform(0.3, 1.5),
         field.uniform(0.0, 2.0 * std::numbers::pi)};

  // Blobs only touch the image; voxels already inside a tube keep their
  // vessel level.
  Rng blobs(mix_seed(spec.seed, 4));
  for (std::size_t b = 0; b < spec.blobs; ++b) {
    const auto value = static_cast<float>(
        blobs.uniform(spec.blob_intensity_min, spec.blob_intensity_max));
    const detail::Vec3 c{blobs.uniform(0.0, double(e.d - 1)), blobs.uniform(0.0, double(e.h - 1)),
                         blobs.uniform(0.0, double(e.w - 1))};
    const detail::Vec3 r{blobs.uniform(spec.blob_radius_min, spec.blob_radius_max),
                         blobs.uniform(spec.blob_radius_min, spec.blob_radius_max),
                         blobs.uniform(spec.blob_radius_min, spec.blob_radius_max)};
    for (std::size_t z = 0; z < e.d; ++z)
      for (std::size_t y = 0; y < e.h; ++y)
        for (std::size_t x = 0; x < e.w; ++x) {
          const double qz = (double(z) - c[0]) / r[0], qy = (double(y) - c[1]) / r[1],
                       qx = (double(x) - c[2]) / r[2];
          const auto i = ph.image.index(z, y, x);
          if (qz * qz + qy * qy + qx * qx <= 1.0 && !ph.truth.data[i]) level[i] = value;
        }
  }

  Rng noise(mix_seed(spec.seed, 3));
  for (std::size_t z = 0; z < e.d; ++z)
    for (std::size_t y = 0; y < e.h; ++y)
      for (std::size_t x = 0; x < e.w; ++x) {
        double s = 0.0;
        for (const auto& w : waves) {
          s += std::cos(2.0 * std::numbers::pi *
                            (w.fz * double(z) / double(e.d) + w.fy * double(y) / double(e.h) +
                             w.fx * double(x) / double(e.w)) +
                        w.phase);
        }
        const double bg = spec.background * 0.5 * (1.0 + s / double(waves.size()));
        const auto i = ph.image.index(z, y, x);
        double v = bg + double(level[i]);
        if (spec.noise > 0.0) v += spec.noise * noise.normal();
        ph.image.data[i] = static_cast<float>(std::max(v, 0.0));
      }
  return ph;
}

}  // namespace uception
