#pragma once

// Test-only oracles: central finite differences and brute-force reference
// kernels written without sharing any code path with the library.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "uception/tensor.hpp"

namespace uception::testing {

inline Tensor5<double> random_tensor(Shape5 s, std::uint64_t seed, double lo = -1.0,
                                     double hi = 1.0) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor5<double> t(s);
  for (double& v : t.values()) v = dist(gen);
  return t;
}

// max |a-b| / max(max|a|, max|b|)
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 1e-12;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  return diff / scale;
}

inline double dot(const Tensor5<double>& a, const Tensor5<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// d loss / d x by central differences, perturbing x in place.
inline std::vector<double> numeric_gradient(Tensor5<double>& x,
                                            const std::function<double()>& loss,
                                            double h = 1e-6) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + h;
    const double up = loss();
    x[i] = saved - h;
    const double down = loss();
    x[i] = saved;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// Direct seven-loop cross-correlation with zero padding.
inline Tensor5<double> reference_conv(const Tensor5<double>& x, const Tensor5<double>& w,
                                      const std::vector<double>& b, const ConvSpec& spec) {
  const Shape5 s = x.shape();
  const long pd = spec.padding == Padding::Same ? (long(spec.kernel.d) - 1) / 2 : 0;
  const long ph = spec.padding == Padding::Same ? (long(spec.kernel.h) - 1) / 2 : 0;
  const long pw = spec.padding == Padding::Same ? (long(spec.kernel.w) - 1) / 2 : 0;
  const long od = (long(s.d) + 2 * pd - long(spec.kernel.d)) / long(spec.stride.d) + 1;
  const long oh = (long(s.h) + 2 * ph - long(spec.kernel.h)) / long(spec.stride.h) + 1;
  const long ow = (long(s.w) + 2 * pw - long(spec.kernel.w)) / long(spec.stride.w) + 1;
  Tensor5<double> y(s.n, spec.out_channels, od, oh, ow);
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t o = 0; o < spec.out_channels; ++o)
      for (long z = 0; z < od; ++z)
        for (long yy = 0; yy < oh; ++yy)
          for (long xx = 0; xx < ow; ++xx) {
            double acc = b[o];
            for (std::size_t c = 0; c < s.c; ++c)
              for (long kz = 0; kz < long(spec.kernel.d); ++kz)
                for (long ky = 0; ky < long(spec.kernel.h); ++ky)
                  for (long kx = 0; kx < long(spec.kernel.w); ++kx) {
                    const long iz = z * long(spec.stride.d) + kz - pd;
                    const long iy = yy * long(spec.stride.h) + ky - ph;
                    const long ix = xx * long(spec.stride.w) + kx - pw;
                    if (iz < 0 || iy < 0 || ix < 0 || iz >= long(s.d) || iy >= long(s.h) ||
                        ix >= long(s.w))
                      continue;
                    acc += w(o, c, kz, ky, kx) * x(n, c, iz, iy, ix);
                  }
            y(n, o, z, yy, xx) = acc;
          }
  return y;
}

}  // namespace uception::testing
