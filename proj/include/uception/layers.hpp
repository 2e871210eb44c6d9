#pragma once

// Forward and backward kernels for the primitive layers: 3-D convolution,
// max-pooling, nearest upsampling, channel concatenation, ReLU, sigmoid and
// inverted dropout. Everything here is a pure function of its arguments.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "uception/error.hpp"
#include "uception/rng.hpp"
#include "uception/tensor.hpp"

namespace uception {

enum class Mode { Train, Infer };

namespace detail {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using StridedMap = Eigen::Map<RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;
template <class T>
using ConstStridedMap = Eigen::Map<const RowMat<T>, Eigen::Unaligned, Eigen::OuterStride<>>;

// Upper bound on im2col buffer elements for one chunk of output planes.
inline constexpr std::size_t kColumnBudget = std::size_t{1} << 22;

struct ConvGeometry {
  Shape5 in, out;
  ConvSpec spec;
  std::size_t pad_d, pad_h, pad_w;
  std::size_t taps() const { return spec.kernel.d * spec.kernel.h * spec.kernel.w; }
  std::size_t rows() const { return spec.in_channels * taps(); }
  std::size_t plane() const { return out.h * out.w; }
  bool pointwise() const {
    return taps() == 1 && spec.stride == Extent3::cube(1);
  }
  std::size_t planes_per_chunk() const {
    return std::clamp<std::size_t>(kColumnBudget / std::max<std::size_t>(1, rows() * plane()), 1,
                                   out.d);
  }
};

inline ConvGeometry conv_geometry(const Shape5& in, const ConvSpec& spec) {
  ConvGeometry g{in, conv_output_shape(in, spec), spec, pad_for(spec.kernel.d, spec.padding),
                 pad_for(spec.kernel.h, spec.padding), pad_for(spec.kernel.w, spec.padding)};
  return g;
}

// Valid output index range [lo, hi) along one axis for kernel tap k, i.e. the
// outputs o with 0 <= o*s + k - pad < in.
inline std::pair<std::size_t, std::size_t> tap_range(std::size_t k, std::size_t pad,
                                                     std::size_t stride, std::size_t in,
                                                     std::size_t out) {
  const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(k) - static_cast<std::ptrdiff_t>(pad);
  const auto s = static_cast<std::ptrdiff_t>(stride);
  // smallest o with o*s + shift >= 0
  std::ptrdiff_t lo = shift >= 0 ? 0 : (-shift + s - 1) / s;
  // largest o with o*s + shift <= in - 1
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in) - 1 - shift;
  std::ptrdiff_t hi = top < 0 ? 0 : top / s + 1;
  hi = std::min<std::ptrdiff_t>(hi, static_cast<std::ptrdiff_t>(out));
  lo = std::min(lo, hi);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Gathers receptive fields of output planes [z0, z1) of one batch item into a
// (rows x (z1-z0)*plane) row-major matrix. Out-of-bounds taps are zero.
template <class T>
void im2col(const T* x, const ConvGeometry& g, std::size_t z0, std::size_t z1, T* col) {
  const auto& k = g.spec.kernel;
  const auto& s = g.spec.stride;
  const std::size_t cols = (z1 - z0) * g.plane();
  const std::size_t in_plane = g.in.h * g.in.w;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.spec.in_channels; ++ci) {
    const T* xc = x + ci * g.in.spatial();
    for (std::size_t kz = 0; kz < k.d; ++kz) {
      const auto [zlo, zhi] = tap_range(kz, g.pad_d, s.d, g.in.d, g.out.d);
      for (std::size_t ky = 0; ky < k.h; ++ky) {
        const auto [ylo, yhi] = tap_range(ky, g.pad_h, s.h, g.in.h, g.out.h);
        for (std::size_t kx = 0; kx < k.w; ++kx, ++row) {
          const auto [xlo, xhi] = tap_range(kx, g.pad_w, s.w, g.in.w, g.out.w);
          T* dst = col + row * cols;
          std::fill(dst, dst + cols, T(0));
          for (std::size_t oz = std::max(z0, zlo); oz < std::min(z1, zhi); ++oz) {
            const std::size_t iz = oz * s.d + kz - g.pad_d;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t iy = oy * s.h + ky - g.pad_h;
              const T* src = xc + iz * in_plane + iy * g.in.w;
              T* out_row = dst + ((oz - z0) * g.out.h + oy) * g.out.w;
              if (s.w == 1) {
                const std::size_t ix0 = xlo + kx - g.pad_w;
                std::copy(src + ix0, src + ix0 + (xhi - xlo), out_row + xlo);
              } else {
                for (std::size_t ox = xlo; ox < xhi; ++ox) {
                  out_row[ox] = src[ox * s.w + kx - g.pad_w];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds column entries back onto the input grid.
template <class T>
void col2im(const T* col, const ConvGeometry& g, std::size_t z0, std::size_t z1, T* x) {
  const auto& k = g.spec.kernel;
  const auto& s = g.spec.stride;
  const std::size_t cols = (z1 - z0) * g.plane();
  const std::size_t in_plane = g.in.h * g.in.w;
  std::size_t row = 0;
  for (std::size_t ci = 0; ci < g.spec.in_channels; ++ci) {
    T* xc = x + ci * g.in.spatial();
    for (std::size_t kz = 0; kz < k.d; ++kz) {
      const auto [zlo, zhi] = tap_range(kz, g.pad_d, s.d, g.in.d, g.out.d);
      for (std::size_t ky = 0; ky < k.h; ++ky) {
        const auto [ylo, yhi] = tap_range(ky, g.pad_h, s.h, g.in.h, g.out.h);
        for (std::size_t kx = 0; kx < k.w; ++kx, ++row) {
          const auto [xlo, xhi] = tap_range(kx, g.pad_w, s.w, g.in.w, g.out.w);
          const T* src_rows = col + row * cols;
          for (std::size_t oz = std::max(z0, zlo); oz < std::min(z1, zhi); ++oz) {
            const std::size_t iz = oz * s.d + kz - g.pad_d;
            for (std::size_t oy = ylo; oy < yhi; ++oy) {
              const std::size_t iy = oy * s.h + ky - g.pad_h;
              T* dst = xc + iz * in_plane + iy * g.in.w;
              const T* src = src_rows + ((oz - z0) * g.out.h + oy) * g.out.w;
              for (std::size_t ox = xlo; ox < xhi; ++ox) {
                dst[ox * s.w + kx - g.pad_w] += src[ox];
              }
            }
          }
        }
      }
    }
  }
}

template <class T>
void check_conv_args(const Shape5& x, const Shape5& w, std::size_t bias_len,
                     const ConvSpec& spec) {
  validate(spec);
  if (x.c != spec.in_channels) {
    throw Error(ErrorCode::ShapeMismatch, "channel",
                "input has " + std::to_string(x.c) + " channels, conv expects " +
                    std::to_string(spec.in_channels));
  }
  require_same_shape(w, spec.weight_shape(), "conv3d weights");
  if (bias_len != spec.out_channels) {
    throw Error(ErrorCode::ShapeMismatch, "bias",
                "bias length " + std::to_string(bias_len) + " != out_channels " +
                    std::to_string(spec.out_channels));
  }
  const Shape5 out = conv_output_shape(x, spec);
  const auto od = dims_of(out);
  for (std::size_t axis = 2; axis < 5; ++axis) {
    if (od[axis] == 0) {
      throw Error(ErrorCode::ShapeMismatch, kAxisNames[axis],
                  "input " + x.str() + " is smaller than the kernel");
    }
  }
}


// ---------------------------------------------------------------------------
// Direct stride-1 kernels. For the small channel counts of the blocks these
// beat im2col + GEMM by a wide margin: the column matrix would be rebuilt for
// every convolution and dwarfs the arithmetic.

struct Dims3 {
  std::size_t d, h, w;
  std::size_t plane() const { return h * w; }
  std::size_t volume() const { return d * h * w; }
};

// Zero-padded copy of `channels` contiguous (d,h,w) blocks.
template <class T>
std::vector<T> pad_channels(const T* x, std::size_t channels, Dims3 in, Dims3 pad) {
  const Dims3 out{in.d + 2 * pad.d, in.h + 2 * pad.h, in.w + 2 * pad.w};
  std::vector<T> buf(channels * out.volume(), T(0));
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t z = 0; z < in.d; ++z)
      for (std::size_t y = 0; y < in.h; ++y) {
        const T* src = x + c * in.volume() + z * in.plane() + y * in.w;
        T* dst = buf.data() + c * out.volume() + (z + pad.d) * out.plane() + (y + pad.h) * out.w +
                 pad.w;
        std::copy(src, src + in.w, dst);
      }
  return buf;
}

// `Lanes` consecutive outputs along x for `Outs` output channels at once,
// accumulated over every tap in registers. Several channels give independent
// FMA chains that share each input load.
template <class T, int Lanes, int Outs>
inline void direct_block(const T* xp, Dims3 pdim, std::size_t in_c, const T* wo,
                         std::size_t w_stride, Extent3 k, const T* bias, std::size_t oz,
                         std::size_t oy, std::size_t ox, T* yrow, std::size_t y_stride) {
  using Packet = Eigen::Array<T, Lanes, 1>;
  Packet acc[Outs];
  for (int q = 0; q < Outs; ++q) acc[q] = Packet::Constant(bias ? bias[q] : T(0));
  std::size_t t = 0;
  for (std::size_t i = 0; i < in_c; ++i) {
    const T* xi = xp + i * pdim.volume();
    for (std::size_t kz = 0; kz < k.d; ++kz)
      for (std::size_t ky = 0; ky < k.h; ++ky) {
        const T* src = xi + (oz + kz) * pdim.plane() + (oy + ky) * pdim.w + ox;
        for (std::size_t kx = 0; kx < k.w; ++kx, ++t) {
          const Packet v = Eigen::Map<const Packet>(src + kx);
          for (int q = 0; q < Outs; ++q) acc[q] += wo[q * w_stride + t] * v;
        }
      }
  }
  for (int q = 0; q < Outs; ++q) Eigen::Map<Packet>(yrow + q * y_stride + ox) = acc[q];
}

template <class T, int Outs>
void direct_rows(const T* xp, Dims3 pdim, std::size_t in_c, const T* wo, std::size_t w_stride,
                 Extent3 k, const T* bias, Dims3 out, T* yo) {
  for (std::size_t oz = 0; oz < out.d; ++oz)
    for (std::size_t oy = 0; oy < out.h; ++oy) {
      T* yrow = yo + oz * out.plane() + oy * out.w;
      std::size_t ox = 0;
      for (; ox + 16 <= out.w; ox += 16)
        direct_block<T, 16, Outs>(xp, pdim, in_c, wo, w_stride, k, bias, oz, oy, ox, yrow,
                                  out.volume());
      for (; ox + 4 <= out.w; ox += 4)
        direct_block<T, 4, Outs>(xp, pdim, in_c, wo, w_stride, k, bias, oz, oy, ox, yrow,
                                 out.volume());
      for (; ox < out.w; ++ox)
        direct_block<T, 1, Outs>(xp, pdim, in_c, wo, w_stride, k, bias, oz, oy, ox, yrow,
                                 out.volume());
    }
}

// y (out_c, od, oh, ow) = valid stride-1 correlation of the padded input xp.
template <class T>
void direct_conv(const T* xp, Dims3 pdim, std::size_t in_c, const T* w, Extent3 k,
                 const T* bias, std::size_t out_c, Dims3 out, T* y) {
  const std::size_t w_stride = in_c * k.d * k.h * k.w;
  std::size_t o = 0;
  for (; o + 4 <= out_c; o += 4)
    direct_rows<T, 4>(xp, pdim, in_c, w + o * w_stride, w_stride, k, bias ? bias + o : nullptr,
                      out, y + o * out.volume());
  for (; o < out_c; ++o)
    direct_rows<T, 1>(xp, pdim, in_c, w + o * w_stride, w_stride, k, bias ? bias + o : nullptr,
                      out, y + o * out.volume());
}

// gw[o,i,kz,ky,kx] += sum over outputs of g[o,.] * xp[i, . + tap]. Lane-wise
// partial sums keep the reduction vectorisable without reassociation; KW fixes
// the number of x taps so the partials stay in registers (0 = runtime k.w).
template <class T, int KW>
void direct_weight_grad_impl(const T* xp, Dims3 pdim, std::size_t in_c, const T* g,
                             std::size_t out_c, Dims3 out, Extent3 k, T* gw) {
  constexpr int L = 8;
  constexpr int kMaxTaps = 15;
  using Packet = Eigen::Array<T, L, 1>;
  const std::size_t kw = KW > 0 ? static_cast<std::size_t>(KW) : k.w;
  Packet part[kMaxTaps];
  T tail[kMaxTaps];
  const std::size_t taps = k.d * k.h * k.w;
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t i = 0; i < in_c; ++i)
      for (std::size_t kz = 0; kz < k.d; ++kz)
        for (std::size_t ky = 0; ky < k.h; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            part[kx].setZero();
            tail[kx] = T(0);
          }
          for (std::size_t oz = 0; oz < out.d; ++oz)
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              const T* grow = g + o * out.volume() + oz * out.plane() + oy * out.w;
              const T* xrow = xp + i * pdim.volume() + (oz + kz) * pdim.plane() + (oy + ky) * pdim.w;
              std::size_t ox = 0;
              for (; ox + L <= out.w; ox += L) {
                const Packet gv = Eigen::Map<const Packet>(grow + ox);
                for (std::size_t kx = 0; kx < kw; ++kx)
                  part[kx] += gv * Eigen::Map<const Packet>(xrow + ox + kx);
              }
              for (; ox < out.w; ++ox)
                for (std::size_t kx = 0; kx < kw; ++kx) tail[kx] += grow[ox] * xrow[ox + kx];
            }
          T* dst = gw + ((o * in_c + i) * taps) + (kz * k.h + ky) * k.w;
          for (std::size_t kx = 0; kx < kw; ++kx) dst[kx] += part[kx].sum() + tail[kx];
        }
}

template <class T>
void direct_weight_grad(const T* xp, Dims3 pdim, std::size_t in_c, const T* g,
                        std::size_t out_c, Dims3 out, Extent3 k, T* gw) {
  switch (k.w) {
    case 3: return direct_weight_grad_impl<T, 3>(xp, pdim, in_c, g, out_c, out, k, gw);
    case 5: return direct_weight_grad_impl<T, 5>(xp, pdim, in_c, g, out_c, out, k, gw);
    case 7: return direct_weight_grad_impl<T, 7>(xp, pdim, in_c, g, out_c, out, k, gw);
    default:
      if (k.w > 15) throw Error(ErrorCode::InvalidArgument, "width", "kernel wider than 15");
      return direct_weight_grad_impl<T, 0>(xp, pdim, in_c, g, out_c, out, k, gw);
  }
}

// Weights for the input-gradient pass: swap in/out channels and flip taps.
template <class T>
std::vector<T> flip_transpose(const T* w, std::size_t out_c, std::size_t in_c, Extent3 k) {
  const std::size_t taps = k.d * k.h * k.w;
  std::vector<T> wt(w, w + out_c * in_c * taps);
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t i = 0; i < in_c; ++i)
      for (std::size_t t = 0; t < taps; ++t)
        wt[(i * out_c + o) * taps + (taps - 1 - t)] = w[(o * in_c + i) * taps + t];
  return wt;
}

inline bool use_direct(const ConvGeometry& g) {
  return g.spec.stride == Extent3::cube(1) && !g.pointwise();
}

}  // namespace detail

// Cross-correlation (no kernel flip) with per-output-channel bias.
// weights: (out_c, in_c, kd, kh, kw).
template <class T>
Tensor5<T> conv3d(const Tensor5<T>& x, const Tensor5<T>& weights, std::span<const T> bias,
                  const ConvSpec& spec) {
  detail::check_conv_args<T>(x.shape(), weights.shape(), bias.size(), spec);
  const auto g = detail::conv_geometry(x.shape(), spec);
  Tensor5<T> y(g.out);
  const auto out_c = static_cast<Eigen::Index>(spec.out_channels);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  Eigen::Map<const detail::RowMat<T>> w(weights.data(), out_c, rows);
  const auto out_spatial = static_cast<Eigen::Index>(g.out.spatial());

  std::vector<T> col;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const T* xn = x.data() + x.offset(n, 0, 0, 0, 0);
    T* yn = y.data() + y.offset(n, 0, 0, 0, 0);
    if (g.pointwise()) {
      Eigen::Map<const detail::RowMat<T>> xm(xn, rows, out_spatial);
      Eigen::Map<detail::RowMat<T>> ym(yn, out_c, out_spatial);
      ym.noalias() = w * xm;
    } else if (detail::use_direct(g)) {
      const detail::Dims3 in{g.in.d, g.in.h, g.in.w}, pad{g.pad_d, g.pad_h, g.pad_w};
      const auto xp = detail::pad_channels(xn, spec.in_channels, in, pad);
      detail::direct_conv(xp.data(), {in.d + 2 * pad.d, in.h + 2 * pad.h, in.w + 2 * pad.w},
                          spec.in_channels, weights.data(), spec.kernel, bias.data(),
                          spec.out_channels, {g.out.d, g.out.h, g.out.w}, yn);
      continue;
    } else {
      const std::size_t step = g.planes_per_chunk();
      col.resize(g.rows() * step * g.plane());
      for (std::size_t z0 = 0; z0 < g.out.d; z0 += step) {
        const std::size_t z1 = std::min(g.out.d, z0 + step);
        const auto cols = static_cast<Eigen::Index>((z1 - z0) * g.plane());
        detail::im2col(xn, g, z0, z1, col.data());
        Eigen::Map<const detail::RowMat<T>> cm(col.data(), rows, cols);
        detail::StridedMap<T> ym(yn + z0 * g.plane(), out_c, cols,
                                 Eigen::OuterStride<>(out_spatial));
        ym.noalias() = w * cm;
      }
    }
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      if (bias[o] == T(0)) continue;
      for (T& v : y.channel(n, o)) v += bias[o];
    }
  }
  return y;
}

template <class T>
struct ConvGrads {
  Tensor5<T> grad_x;
  Tensor5<T> grad_w;
  std::vector<T> grad_b;
};

template <class T>
ConvGrads<T> conv3d_backward(const Tensor5<T>& x, const Tensor5<T>& weights,
                             const Tensor5<T>& grad_out, const ConvSpec& spec) {
  detail::check_conv_args<T>(x.shape(), weights.shape(), spec.out_channels, spec);
  const auto g = detail::conv_geometry(x.shape(), spec);
  require_same_shape(grad_out.shape(), g.out, "conv3d_backward grad_out");

  ConvGrads<T> r{Tensor5<T>(x.shape()), Tensor5<T>(weights.shape()),
                 std::vector<T>(spec.out_channels, T(0))};
  const auto out_c = static_cast<Eigen::Index>(spec.out_channels);
  const auto rows = static_cast<Eigen::Index>(g.rows());
  const auto out_spatial = static_cast<Eigen::Index>(g.out.spatial());
  Eigen::Map<const detail::RowMat<T>> w(weights.data(), out_c, rows);
  Eigen::Map<detail::RowMat<T>> gw(r.grad_w.data(), out_c, rows);

  std::vector<T> col, gcol;
  for (std::size_t n = 0; n < x.shape().n; ++n) {
    const T* xn = x.data() + x.offset(n, 0, 0, 0, 0);
    const T* gn = grad_out.data() + grad_out.offset(n, 0, 0, 0, 0);
    T* gxn = r.grad_x.data() + r.grad_x.offset(n, 0, 0, 0, 0);
    for (std::size_t o = 0; o < spec.out_channels; ++o) {
      T acc = T(0);
      for (T v : grad_out.channel(n, o)) acc += v;
      r.grad_b[o] += acc;
    }
    if (g.pointwise()) {
      Eigen::Map<const detail::RowMat<T>> xm(xn, rows, out_spatial);
      Eigen::Map<const detail::RowMat<T>> gm(gn, out_c, out_spatial);
      Eigen::Map<detail::RowMat<T>> gxm(gxn, rows, out_spatial);
      gw.noalias() += gm * xm.transpose();
      gxm.noalias() = w.transpose() * gm;
      continue;
    }
    if (detail::use_direct(g)) {
      const auto& k = spec.kernel;
      const detail::Dims3 in{g.in.d, g.in.h, g.in.w}, pad{g.pad_d, g.pad_h, g.pad_w};
      const detail::Dims3 out{g.out.d, g.out.h, g.out.w};
      const auto xp = detail::pad_channels(xn, spec.in_channels, in, pad);
      detail::direct_weight_grad(xp.data(), {in.d + 2 * pad.d, in.h + 2 * pad.h, in.w + 2 * pad.w},
                                 spec.in_channels, gn, spec.out_channels, out, k,
                                 r.grad_w.data());
      // grad_x is the full correlation of grad_out with the flipped kernel.
      const detail::Dims3 q{k.d - 1 - pad.d, k.h - 1 - pad.h, k.w - 1 - pad.w};
      const auto gp = detail::pad_channels(gn, spec.out_channels, out, q);
      const auto wt = detail::flip_transpose(weights.data(), spec.out_channels, spec.in_channels, k);
      detail::direct_conv(gp.data(), {out.d + 2 * q.d, out.h + 2 * q.h, out.w + 2 * q.w},
                          spec.out_channels, wt.data(), k, static_cast<const T*>(nullptr),
                          spec.in_channels, in, gxn);
      continue;
    }
    const std::size_t step = g.planes_per_chunk();
    col.resize(g.rows() * step * g.plane());
    gcol.resize(col.size());
    for (std::size_t z0 = 0; z0 < g.out.d; z0 += step) {
      const std::size_t z1 = std::min(g.out.d, z0 + step);
      const auto cols = static_cast<Eigen::Index>((z1 - z0) * g.plane());
      detail::im2col(xn, g, z0, z1, col.data());
      Eigen::Map<const detail::RowMat<T>> cm(col.data(), rows, cols);
      detail::ConstStridedMap<T> gm(gn + z0 * g.plane(), out_c, cols,
                                    Eigen::OuterStride<>(out_spatial));
      gw.noalias() += gm * cm.transpose();
      Eigen::Map<detail::RowMat<T>> gcm(gcol.data(), rows, cols);
      gcm.noalias() = w.transpose() * gm;
      detail::col2im(gcol.data(), g, z0, z1, gxn);
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Max pooling

template <class T>
struct PoolResult {
  Tensor5<T> output;
  // Flat index into the input tensor of the element selected for each output.
  std::vector<std::uint32_t> argmax;
};

namespace detail {

// Running max along one axis (window 2r+1, stride 1, out-of-range ignored),
// carrying the flat input index of the winner. Earlier positions along the
// axis win ties.
template <class T>
void max_along_axis(std::vector<T>& val, std::vector<std::uint32_t>& idx, std::size_t outer,
                    std::size_t len, std::size_t inner, std::size_t r) {
  std::vector<T> nv(val.size());
  std::vector<std::uint32_t> ni(idx.size());
  if (inner == 1) {
    for (std::size_t a = 0; a < outer; ++a) {
      const T* v = val.data() + a * len;
      const std::uint32_t* ix = idx.data() + a * len;
      for (std::size_t p = 0; p < len; ++p) {
        const std::size_t lo = p >= r ? p - r : 0;
        const std::size_t hi = std::min(len - 1, p + r);
        std::size_t best = lo;
        for (std::size_t q = lo + 1; q <= hi; ++q)
          if (v[q] > v[best]) best = q;
        nv[a * len + p] = v[best];
        ni[a * len + p] = ix[best];
      }
    }
    val.swap(nv);
    idx.swap(ni);
    return;
  }
  for (std::size_t a = 0; a < outer; ++a)
    for (std::size_t p = 0; p < len; ++p) {
      const std::size_t lo = p >= r ? p - r : 0;
      const std::size_t hi = std::min(len - 1, p + r);
      T* dst_v = nv.data() + (a * len + p) * inner;
      std::uint32_t* dst_i = ni.data() + (a * len + p) * inner;
      const T* first_v = val.data() + (a * len + lo) * inner;
      const std::uint32_t* first_i = idx.data() + (a * len + lo) * inner;
      std::copy(first_v, first_v + inner, dst_v);
      std::copy(first_i, first_i + inner, dst_i);
      for (std::size_t q = lo + 1; q <= hi; ++q) {
        const T* sv = val.data() + (a * len + q) * inner;
        const std::uint32_t* si = idx.data() + (a * len + q) * inner;
        for (std::size_t j = 0; j < inner; ++j) {
          const bool take = sv[j] > dst_v[j];
          dst_v[j] = take ? sv[j] : dst_v[j];
          dst_i[j] = take ? si[j] : dst_i[j];
        }
      }
    }
  val.swap(nv);
  idx.swap(ni);
}

}  // namespace detail

// Max over each window; Same padding ignores out-of-range positions rather
// than treating them as zeros. With Valid padding every spatial extent must be
// divisible by the stride (the pooling used for downsampling is pad-free).
template <class T>
PoolResult<T> maxpool3d(const Tensor5<T>& x, Extent3 window = Extent3::cube(2),
                        Extent3 stride = Extent3::cube(2), Padding padding = Padding::Valid) {
  const Shape5 in = x.shape();
  if (in.numel() >= std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorCode::InvalidArgument, "size", "tensor too large for pooling index map");
  }
  if (padding == Padding::Valid) {
    const std::array<std::size_t, 3> ext{in.d, in.h, in.w};
    const std::array<std::size_t, 3> st{stride.d, stride.h, stride.w};
    for (std::size_t a = 0; a < 3; ++a) {
      if (st[a] == 0 || ext[a] % st[a] != 0) {
        throw Error(ErrorCode::OddExtent, kAxisNames[a + 2],
                    "extent " + std::to_string(ext[a]) + " is not divisible by pooling stride");
      }
    }
  }
  if ((window.d % 2 == 0 || window.h % 2 == 0 || window.w % 2 == 0) && padding == Padding::Same) {
    throw Error(ErrorCode::InvalidArgument, "window", "Same pooling needs an odd window");
  }
  if (padding == Padding::Same && stride == Extent3::cube(1)) {
    // Separable: a 3-D box max is three 1-D running maxima.
    PoolResult<T> r{x, std::vector<std::uint32_t>(in.numel())};
    std::vector<T>& val = r.output.storage();
    for (std::size_t i = 0; i < r.argmax.size(); ++i) r.argmax[i] = static_cast<std::uint32_t>(i);
    const std::size_t blocks = in.n * in.c;
    detail::max_along_axis(val, r.argmax, blocks * in.d * in.h, in.w, 1, window.w / 2);
    detail::max_along_axis(val, r.argmax, blocks * in.d, in.h, in.w, window.h / 2);
    detail::max_along_axis(val, r.argmax, blocks, in.d, in.h * in.w, window.d / 2);
    return r;
  }
  const Shape5 out{in.n, in.c, conv_out_extent(in.d, window.d, stride.d, padding),
                   conv_out_extent(in.h, window.h, stride.h, padding),
                   conv_out_extent(in.w, window.w, stride.w, padding)};
  const auto pd = static_cast<std::ptrdiff_t>(padding == Padding::Same ? (window.d - 1) / 2 : 0);
  const auto ph = static_cast<std::ptrdiff_t>(padding == Padding::Same ? (window.h - 1) / 2 : 0);
  const auto pw = static_cast<std::ptrdiff_t>(padding == Padding::Same ? (window.w - 1) / 2 : 0);

  PoolResult<T> r{Tensor5<T>(out), std::vector<std::uint32_t>(out.numel())};
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const std::size_t base = x.offset(n, c, 0, 0, 0);
      for (std::size_t oz = 0; oz < out.d; ++oz) {
        for (std::size_t oy = 0; oy < out.h; ++oy) {
          for (std::size_t ox = 0; ox < out.w; ++ox, ++o) {
            T best = -std::numeric_limits<T>::infinity();
            std::size_t best_i = base;
            bool found = false;
            for (std::size_t kz = 0; kz < window.d; ++kz) {
              const auto iz = static_cast<std::ptrdiff_t>(oz * stride.d + kz) - pd;
              if (iz < 0 || iz >= static_cast<std::ptrdiff_t>(in.d)) continue;
              for (std::size_t ky = 0; ky < window.h; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * stride.h + ky) - ph;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(in.h)) continue;
                for (std::size_t kx = 0; kx < window.w; ++kx) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * stride.w + kx) - pw;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(in.w)) continue;
                  const std::size_t i =
                      base + (static_cast<std::size_t>(iz) * in.h + static_cast<std::size_t>(iy)) *
                                 in.w +
                      static_cast<std::size_t>(ix);
                  if (!found || x[i] > best) {
                    best = x[i];
                    best_i = i;
                    found = true;
                  }
                }
              }
            }
            r.output[o] = best;
            r.argmax[o] = static_cast<std::uint32_t>(best_i);
          }
        }
      }
    }
  }
  return r;
}

template <class T>
Tensor5<T> maxpool3d_backward(const Tensor5<T>& grad_out, std::span<const std::uint32_t> argmax,
                              const Shape5& input_shape) {
  if (argmax.size() != grad_out.size()) {
    throw Error(ErrorCode::ShapeMismatch, "argmax", "index map does not match grad_out");
  }
  Tensor5<T> gx(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) {
    if (argmax[o] >= gx.size()) {
      throw Error(ErrorCode::ShapeMismatch, "argmax", "index outside the input tensor");
    }
    gx[argmax[o]] += grad_out[o];
  }
  return gx;
}

// ---------------------------------------------------------------------------
// Nearest-neighbour upsampling

template <class T>
Tensor5<T> upsample_nearest(const Tensor5<T>& x, std::size_t factor = 2) {
  const Shape5 in = x.shape();
  Tensor5<T> y(Shape5{in.n, in.c, in.d * factor, in.h * factor, in.w * factor});
  const Shape5 out = y.shape();
  for (std::size_t n = 0; n < in.n; ++n)
    for (std::size_t c = 0; c < in.c; ++c)
      for (std::size_t z = 0; z < out.d; ++z)
        for (std::size_t yy = 0; yy < out.h; ++yy) {
          const T* src = x.data() + x.offset(n, c, z / factor, yy / factor, 0);
          T* dst = y.data() + y.offset(n, c, z, yy, 0);
          for (std::size_t xx = 0; xx < out.w; ++xx) dst[xx] = src[xx / factor];
        }
  return y;
}

template <class T>
Tensor5<T> upsample_nearest_backward(const Tensor5<T>& grad_out, std::size_t factor = 2) {
  const Shape5 out = grad_out.shape();
  for (auto [e, name] : {std::pair{out.d, "depth"}, std::pair{out.h, "height"},
                         std::pair{out.w, "width"}}) {
    if (e % factor != 0) {
      throw Error(ErrorCode::ShapeMismatch, name, "grad extent not divisible by upsample factor");
    }
  }
  Tensor5<T> gx(Shape5{out.n, out.c, out.d / factor, out.h / factor, out.w / factor});
  for (std::size_t n = 0; n < out.n; ++n)
    for (std::size_t c = 0; c < out.c; ++c)
      for (std::size_t z = 0; z < out.d; ++z)
        for (std::size_t yy = 0; yy < out.h; ++yy) {
          const T* src = grad_out.data() + grad_out.offset(n, c, z, yy, 0);
          T* dst = gx.data() + gx.offset(n, c, z / factor, yy / factor, 0);
          for (std::size_t xx = 0; xx < out.w; ++xx) dst[xx / factor] += src[xx];
        }
  return gx;
}

// ---------------------------------------------------------------------------
// Channel concatenation

template <class T>
Tensor5<T> concat_channels(std::span<const Tensor5<T>* const> xs) {
  if (xs.empty()) throw Error(ErrorCode::EmptyInput, "inputs", "nothing to concatenate");
  Shape5 out = xs.front()->shape();
  out.c = 0;
  for (const auto* t : xs) {
    const Shape5& s = t->shape();
    const Shape5 probe{s.n, out.c, s.d, s.h, s.w};
    require_same_shape(probe, out, "concat_channels");
    out.c += s.c;
  }
  Tensor5<T> y(out);
  for (std::size_t n = 0; n < out.n; ++n) {
    T* dst = y.data() + y.offset(n, 0, 0, 0, 0);
    for (const auto* t : xs) {
      const std::size_t len = t->shape().c * t->shape().spatial();
      const T* src = t->data() + t->offset(n, 0, 0, 0, 0);
      dst = std::copy(src, src + len, dst);
    }
  }
  return y;
}

template <class T>
Tensor5<T> concat_channels(const std::vector<Tensor5<T>>& xs) {
  std::vector<const Tensor5<T>*> ptrs;
  for (const auto& t : xs) ptrs.push_back(&t);
  return concat_channels<T>(std::span<const Tensor5<T>* const>(ptrs));
}

// Inverse of concat_channels: slices `x` into consecutive channel groups.
template <class T>
std::vector<Tensor5<T>> split_channels(const Tensor5<T>& x, std::span<const std::size_t> counts) {
  std::size_t total = 0;
  for (auto c : counts) total += c;
  if (total != x.shape().c) {
    throw Error(ErrorCode::ShapeMismatch, "channel",
                "split counts sum to " + std::to_string(total) + ", tensor has " +
                    std::to_string(x.shape().c));
  }
  std::vector<Tensor5<T>> parts;
  std::size_t first = 0;
  for (auto c : counts) {
    Shape5 s = x.shape();
    s.c = c;
    Tensor5<T> part(s);
    for (std::size_t n = 0; n < s.n; ++n) {
      const T* src = x.data() + x.offset(n, first, 0, 0, 0);
      std::copy(src, src + c * s.spatial(), part.data() + part.offset(n, 0, 0, 0, 0));
    }
    parts.push_back(std::move(part));
    first += c;
  }
  return parts;
}

// ---------------------------------------------------------------------------
// Activations and dropout

template <class T>
Tensor5<T> relu(Tensor5<T> x) {
  for (T& v : x.values()) v = v > T(0) ? v : T(0);
  return x;
}

// `x` may be either the ReLU input or its output: both are positive exactly
// where the gradient passes.
template <class T>
Tensor5<T> relu_backward(const Tensor5<T>& x, Tensor5<T> grad) {
  require_same_shape(x.shape(), grad.shape(), "relu_backward");
  for (std::size_t i = 0; i < grad.size(); ++i)
    if (!(x[i] > T(0))) grad[i] = T(0);
  return grad;
}

// Logistic function, kept strictly inside (0, 1) even where the exact value
// rounds to 0 or 1 in T.
template <class T>
T sigmoid(T v) {
  constexpr T lo = std::numeric_limits<T>::min();
  const T hi = std::nextafter(T(1), T(0));
  T s;
  if (v >= T(0)) {
    s = T(1) / (T(1) + std::exp(-v));
  } else {
    const T e = std::exp(v);
    s = e / (T(1) + e);
  }
  return std::clamp(s, lo, hi);
}

template <class T>
Tensor5<T> sigmoid(Tensor5<T> x) {
  for (T& v : x.values()) v = sigmoid(v);
  return x;
}

// Takes the sigmoid *output* y; d sigma = y (1 - y).
template <class T>
Tensor5<T> sigmoid_backward(const Tensor5<T>& y, Tensor5<T> grad) {
  require_same_shape(y.shape(), grad.shape(), "sigmoid_backward");
  // Saturated outputs produce subnormal products, which then crawl through
  // every upstream convolution at a large slowdown on x86. Flush them.
  constexpr T tiny = std::numeric_limits<T>::min();
  for (std::size_t i = 0; i < grad.size(); ++i) {
    const T v = grad[i] * (y[i] * (T(1) - y[i]));
    grad[i] = std::abs(v) < tiny ? T(0) : v;
  }
  return grad;
}

template <class T>
struct DropoutResult {
  Tensor5<T> output;
  std::vector<std::uint8_t> mask;  // 1 = kept
};

// Inverted dropout: each voxel is zeroed with probability `rate` and survivors
// are scaled by 1/(1-rate). Identity in Infer mode.
template <class T>
DropoutResult<T> dropout(Tensor5<T> x, double rate, std::uint64_t seed, Mode mode = Mode::Train) {
  if (!(rate >= 0.0 && rate < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "rate", "dropout rate must lie in [0, 1)");
  }
  std::vector<std::uint8_t> mask(x.size(), 1);
  if (mode == Mode::Infer || rate == 0.0) return {std::move(x), std::move(mask)};
  Rng rng(seed);
  const T scale = T(1) / static_cast<T>(1.0 - rate);
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (rng.uniform() < rate) {
      mask[i] = 0;
      x[i] = T(0);
    } else {
      x[i] *= scale;
    }
  }
  return {std::move(x), std::move(mask)};
}

template <class T>
Tensor5<T> dropout_backward(Tensor5<T> grad, std::span<const std::uint8_t> mask, double rate) {
  if (mask.size() != grad.size()) {
    throw Error(ErrorCode::ShapeMismatch, "mask", "dropout mask does not match gradient");
  }
  const T scale = T(1) / static_cast<T>(1.0 - rate);
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] = mask[i] ? grad[i] * scale : T(0);
  return grad;
}

}  // namespace uception
