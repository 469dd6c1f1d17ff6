#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fvnet/error.hpp"

namespace fvnet {

/// Extents of a 4-way tensor in (frames, height, width, channels) order.
using Dims4 = std::array<std::size_t, 4>;

inline std::string to_string(const Dims4& d) {
  return "(" + std::to_string(d[0]) + "," + std::to_string(d[1]) + "," +
         std::to_string(d[2]) + "," + std::to_string(d[3]) + ")";
}

inline std::size_t element_count(const Dims4& d) { return d[0] * d[1] * d[2] * d[3]; }

/// Dense row-major f64 tensor laid out as (n, h, w, c), so every channel
/// fiber is contiguous.
class Tensor4 {
 public:
  Tensor4() = default;

  explicit Tensor4(const Dims4& dims, double fill = 0.0)
      : dims_(dims), values_(element_count(dims), fill) {}

  Tensor4(const Dims4& dims, std::vector<double> values) : dims_(dims), values_(std::move(values)) {
    if (values_.size() != element_count(dims_)) {
      throw ShapeError("tensor of dims " + to_string(dims_) + " needs " +
                       std::to_string(element_count(dims_)) + " values, got " +
                       std::to_string(values_.size()));
    }
  }

  const Dims4& dims() const noexcept { return dims_; }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }
  const std::vector<double>& storage() const noexcept { return values_; }

  std::size_t offset(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return ((n * dims_[1] + h) * dims_[2] + w) * dims_[3] + c;
  }

  double& operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) noexcept {
    return values_[offset(n, h, w, c)];
  }
  double operator()(std::size_t n, std::size_t h, std::size_t w, std::size_t c) const noexcept {
    return values_[offset(n, h, w, c)];
  }

  std::span<const double> fiber(std::size_t n, std::size_t h, std::size_t w) const noexcept {
    return std::span<const double>(values_).subspan(offset(n, h, w, 0), dims_[3]);
  }
  std::span<double> fiber(std::size_t n, std::size_t h, std::size_t w) noexcept {
    return std::span<double>(values_).subspan(offset(n, h, w, 0), dims_[3]);
  }

  bool all_finite() const noexcept {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  Dims4 dims_{0, 0, 0, 0};
  std::vector<double> values_;
};

/// Copies the sub-block [offsets, offsets + sizes) out of `t`.
inline Tensor4 crop(const Tensor4& t, const Dims4& offsets, const Dims4& sizes) {
  static constexpr const char* kAxis[] = {"n", "h", "w", "c"};
  for (std::size_t a = 0; a < 4; ++a) {
    if (offsets[a] > t.dim(a) || sizes[a] > t.dim(a) - offsets[a]) {
      throw BoundsError("crop out of range on axis " + std::string(kAxis[a]) + ": offset " +
                        std::to_string(offsets[a]) + " + size " + std::to_string(sizes[a]) +
                        " exceeds extent " + std::to_string(t.dim(a)));
    }
  }
  Tensor4 out(sizes);
  if (out.empty()) return out;
  for (std::size_t n = 0; n < sizes[0]; ++n) {
    for (std::size_t h = 0; h < sizes[1]; ++h) {
      for (std::size_t w = 0; w < sizes[2]; ++w) {
        auto src = t.fiber(offsets[0] + n, offsets[1] + h, offsets[2] + w)
                       .subspan(offsets[3], sizes[3]);
        auto dst = out.fiber(n, h, w);
        std::copy(src.begin(), src.end(), dst.begin());
      }
    }
  }
  return out;
}

/// Frames [first, first + count) of `t`.
inline Tensor4 frames(const Tensor4& t, std::size_t first, std::size_t count) {
  return crop(t, {first, 0, 0, 0}, {count, t.dim(1), t.dim(2), t.dim(3)});
}

}  // namespace fvnet
