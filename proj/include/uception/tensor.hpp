#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "uception/error.hpp"

namespace uception {

// (batch, channel, depth, height, width); width varies fastest in memory.
struct Shape5 {
  std::size_t n = 0, c = 0, d = 0, h = 0, w = 0;

  constexpr std::size_t spatial() const { return d * h * w; }
  constexpr std::size_t numel() const { return n * c * d * h * w; }
  constexpr bool operator==(const Shape5&) const = default;

  std::string str() const {
    return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(d) + "," +
           std::to_string(h) + "," + std::to_string(w) + ")";
  }
};

inline constexpr std::array<const char*, 5> kAxisNames = {"batch", "channel", "depth", "height",
                                                          "width"};

inline std::array<std::size_t, 5> dims_of(const Shape5& s) { return {s.n, s.c, s.d, s.h, s.w}; }

// Throws a ShapeMismatch naming the first axis on which the shapes differ.
inline void require_same_shape(const Shape5& a, const Shape5& b, const std::string& what) {
  auto da = dims_of(a);
  auto db = dims_of(b);
  for (std::size_t i = 0; i < 5; ++i) {
    if (da[i] != db[i]) {
      throw Error(ErrorCode::ShapeMismatch, kAxisNames[i],
                  what + ": " + a.str() + " vs " + b.str());
    }
  }
}

template <class T>
class Tensor5 {
  static_assert(std::is_floating_point_v<T>, "Tensor5 holds real numbers");

 public:
  using value_type = T;

  Tensor5() = default;
  explicit Tensor5(Shape5 shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor5(std::size_t n, std::size_t c, std::size_t d, std::size_t h, std::size_t w,
          T fill = T(0))
      : Tensor5(Shape5{n, c, d, h, w}, fill) {}
  Tensor5(Shape5 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw Error(ErrorCode::ShapeMismatch, "data",
                  "buffer length " + std::to_string(data_.size()) + " does not match shape " +
                      shape_.str());
    }
  }

  const Shape5& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t z, std::size_t y,
                     std::size_t x) const {
    return (((n * shape_.c + c) * shape_.d + z) * shape_.h + y) * shape_.w + x;
  }
  T& operator()(std::size_t n, std::size_t c, std::size_t z, std::size_t y, std::size_t x) {
    return data_[offset(n, c, z, y, x)];
  }
  T operator()(std::size_t n, std::size_t c, std::size_t z, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, z, y, x)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // Contiguous (d,h,w) block of one channel of one batch item.
  std::span<T> channel(std::size_t n, std::size_t c) {
    return std::span<T>(data_).subspan(offset(n, c, 0, 0, 0), shape_.spatial());
  }
  std::span<const T> channel(std::size_t n, std::size_t c) const {
    return std::span<const T>(data_).subspan(offset(n, c, 0, 0, 0), shape_.spatial());
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor5<U> cast() const {
    Tensor5<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  Tensor5& operator+=(const Tensor5& other) {
    require_same_shape(shape_, other.shape_, "tensor add");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
    return *this;
  }

  bool operator==(const Tensor5&) const = default;

 private:
  Shape5 shape_{};
  std::vector<T> data_;
};

enum class Padding { Same, Valid };

struct Extent3 {
  std::size_t d = 1, h = 1, w = 1;
  constexpr bool operator==(const Extent3&) const = default;
  static constexpr Extent3 cube(std::size_t k) { return {k, k, k}; }
};

struct ConvSpec {
  Extent3 kernel = Extent3::cube(3);
  Extent3 stride = Extent3::cube(1);
  Padding padding = Padding::Same;
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;

  Shape5 weight_shape() const {
    return {out_channels, in_channels, kernel.d, kernel.h, kernel.w};
  }
  std::size_t weight_count() const { return weight_shape().numel(); }

  static ConvSpec cube(std::size_t k, std::size_t in, std::size_t out, std::size_t stride = 1,
                       Padding pad = Padding::Same) {
    return {Extent3::cube(k), Extent3::cube(stride), pad, in, out};
  }
};

inline std::size_t pad_for(std::size_t kernel, Padding padding) {
  return padding == Padding::Same ? (kernel - 1) / 2 : 0;
}

// floor((in + 2*pad - k) / s) + 1, or 0 when the window does not fit.
inline std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                   Padding padding) {
  const std::size_t padded = in + 2 * pad_for(kernel, padding);
  if (padded < kernel) return 0;
  return (padded - kernel) / stride + 1;
}

inline void validate(const ConvSpec& spec) {
  for (auto [k, name] : {std::pair{spec.kernel.d, "depth"}, std::pair{spec.kernel.h, "height"},
                         std::pair{spec.kernel.w, "width"}}) {
    if (k == 0 || k % 2 == 0) {
      throw Error(ErrorCode::InvalidArgument, name, "kernel extents must be odd and positive");
    }
  }
  if (spec.stride.d == 0 || spec.stride.h == 0 || spec.stride.w == 0) {
    throw Error(ErrorCode::InvalidArgument, "stride", "strides must be positive");
  }
  if (spec.in_channels == 0 || spec.out_channels == 0) {
    throw Error(ErrorCode::InvalidArgument, "channel", "channel counts must be positive");
  }
}

inline Shape5 conv_output_shape(const Shape5& in, const ConvSpec& spec) {
  return {in.n, spec.out_channels,
          conv_out_extent(in.d, spec.kernel.d, spec.stride.d, spec.padding),
          conv_out_extent(in.h, spec.kernel.h, spec.stride.h, spec.padding),
          conv_out_extent(in.w, spec.kernel.w, spec.stride.w, spec.padding)};
}

}  // namespace uception
