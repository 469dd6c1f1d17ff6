#pragma once

// Per-frame local feature extraction: local contrast normalization, then one
// trainable valid-mode convolution, ReLU and mean pooling.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/tensor.hpp"

namespace fvnet {

inline constexpr std::size_t kLcnWindow = 9;
inline constexpr double kLcnEpsilon = 1e-6;

/// Local contrast normalization, applied to every frame and channel
/// independently: (v - local mean) / (local std + eps) over a window x window
/// neighbourhood clipped to the frame. The std is the population std.
inline Tensor4 lcn(const Tensor4& frames, std::size_t window = kLcnWindow, double eps = kLcnEpsilon) {
  const auto [L, H, W, C] = frames.dims();
  const std::size_t r = window / 2;
  Tensor4 out(frames.dims());
  for (std::size_t f = 0; f < L; ++f) {
    for (std::size_t y = 0; y < H; ++y) {
      const std::size_t y_lo = y >= r ? y - r : 0, y_hi = std::min(H, y + r + 1);
      for (std::size_t x = 0; x < W; ++x) {
        const std::size_t x_lo = x >= r ? x - r : 0, x_hi = std::min(W, x + r + 1);
        const double count = static_cast<double>((y_hi - y_lo) * (x_hi - x_lo));
        for (std::size_t c = 0; c < C; ++c) {
          double sum = 0.0;
          for (std::size_t yy = y_lo; yy < y_hi; ++yy)
            for (std::size_t xx = x_lo; xx < x_hi; ++xx) sum += frames(f, yy, xx, c);
          const double mean = sum / count;
          double sq = 0.0;
          for (std::size_t yy = y_lo; yy < y_hi; ++yy)
            for (std::size_t xx = x_lo; xx < x_hi; ++xx) {
              const double d = frames(f, yy, xx, c) - mean;
              sq += d * d;
            }
          out(f, y, x, c) = (frames(f, y, x, c) - mean) / (std::sqrt(sq / count) + eps);
        }
      }
    }
  }
  return out;
}

struct ExtractorParams {
  Tensor4 filters;              // (d, k_h, k_w, in_channels)
  std::vector<double> biases;   // d
  std::size_t pool_window = 1;
  std::size_t pool_stride = 1;

  std::size_t channels() const { return filters.dim(0); }
  std::size_t kernel_h() const { return filters.dim(1); }
  std::size_t kernel_w() const { return filters.dim(2); }
  std::size_t in_channels() const { return filters.dim(3); }
  std::size_t parameter_count() const { return filters.size() + biases.size(); }
};

inline void validate(const ExtractorParams& p) {
  if (p.channels() < 1) throw ConfigError("extractor needs at least one filter");
  if (p.kernel_h() % 2 == 0 || p.kernel_w() % 2 == 0) throw ConfigError("extractor kernels must be odd-sized");
  if (p.biases.size() != p.channels()) throw ShapeError("extractor bias count does not match filter count");
  if (p.pool_window < 1 || p.pool_stride < 1) throw ConfigError("extractor pool window and stride must be >= 1");
}

/// Filters drawn from N(0, stddev^2), zero biases.
inline ExtractorParams random_extractor(std::size_t d, std::size_t k_h, std::size_t k_w, std::size_t in_channels,
                                        std::size_t pool_window, std::size_t pool_stride, Rng& rng,
                                        double stddev = 0.01) {
  ExtractorParams p;
  p.filters = Tensor4({d, k_h, k_w, in_channels});
  for (double& v : p.filters.values()) v = rng.normal(0.0, stddev);
  p.biases.assign(d, 0.0);
  p.pool_window = pool_window;
  p.pool_stride = pool_stride;
  validate(p);
  return p;
}

/// Spatial extent of the maps produced from frames of size (h, w).
inline std::pair<std::size_t, std::size_t> extractor_output_hw(const ExtractorParams& p, std::size_t h,
                                                               std::size_t w) {
  if (h < p.kernel_h() || w < p.kernel_w()) {
    throw ShapeError("frame " + std::to_string(h) + "x" + std::to_string(w) + " smaller than filter " +
                     std::to_string(p.kernel_h()) + "x" + std::to_string(p.kernel_w()));
  }
  const std::size_t ch = h - p.kernel_h() + 1, cw = w - p.kernel_w() + 1;
  if (ch < p.pool_window || cw < p.pool_window) {
    throw ShapeError("convolution output smaller than the pooling window");
  }
  return {(ch - p.pool_window) / p.pool_stride + 1, (cw - p.pool_window) / p.pool_stride + 1};
}

struct ExtractorCache {
  Tensor4 input;
  Tensor4 preactivation;  // (L, conv_h, conv_w, d)
};

inline Tensor4 extract(const Tensor4& frames, const ExtractorParams& p, ExtractorCache* cache = nullptr) {
  validate(p);
  const auto [L, H, W, Cin] = frames.dims();
  if (Cin != p.in_channels()) {
    throw ShapeError("frames have " + std::to_string(Cin) + " channels, filters expect " +
                     std::to_string(p.in_channels()));
  }
  const auto [Fh, Fw] = extractor_output_hw(p, H, W);
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w(), d = p.channels();
  const std::size_t ch = H - kh + 1, cw = W - kw + 1;

  Tensor4 pre({L, ch, cw, d});
  for (std::size_t f = 0; f < L; ++f)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x)
        for (std::size_t o = 0; o < d; ++o) {
          double acc = p.biases[o];
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              auto in = frames.fiber(f, y + i, x + j);
              auto w = p.filters.fiber(o, i, j);
              for (std::size_t c = 0; c < Cin; ++c) acc += in[c] * w[c];
            }
          pre(f, y, x, o) = acc;
        }

  const std::size_t pw = p.pool_window, ps = p.pool_stride;
  const double inv = 1.0 / static_cast<double>(pw * pw);
  Tensor4 out({L, Fh, Fw, d});
  for (std::size_t f = 0; f < L; ++f)
    for (std::size_t y = 0; y < Fh; ++y)
      for (std::size_t x = 0; x < Fw; ++x)
        for (std::size_t o = 0; o < d; ++o) {
          double acc = 0.0;
          for (std::size_t i = 0; i < pw; ++i)
            for (std::size_t j = 0; j < pw; ++j) acc += std::max(0.0, pre(f, y * ps + i, x * ps + j, o));
          out(f, y, x, o) = acc * inv;
        }

  if (cache) {
    cache->input = frames;
    cache->preactivation = std::move(pre);
  }
  return out;
}

struct ExtractorGrads {
  Tensor4 frames;   // empty unless requested
  Tensor4 filters;
  std::vector<double> biases;
};

inline ExtractorGrads extract_backward(const Tensor4& upstream, const ExtractorCache& cache,
                                       const ExtractorParams& p, bool input_grad = true) {
  const auto& pre = cache.preactivation;
  const auto [L, H, W, Cin] = cache.input.dims();
  if (pre.empty() && L > 0) throw ShapeError("extractor backward called without a forward cache");
  const auto [Fh, Fw] = extractor_output_hw(p, H, W);
  if (upstream.dims() != Dims4{L, Fh, Fw, p.channels()}) {
    throw ShapeError("extractor upstream gradient has dims " + to_string(upstream.dims()) + ", expected " +
                     to_string(Dims4{L, Fh, Fw, p.channels()}));
  }
  const std::size_t kh = p.kernel_h(), kw = p.kernel_w(), d = p.channels();
  const std::size_t ch = pre.dim(1), cw = pre.dim(2);
  const std::size_t pw = p.pool_window, ps = p.pool_stride;
  const double inv = 1.0 / static_cast<double>(pw * pw);

  // Through mean pooling and ReLU.
  Tensor4 g_pre(pre.dims());
  for (std::size_t f = 0; f < L; ++f)
    for (std::size_t y = 0; y < Fh; ++y)
      for (std::size_t x = 0; x < Fw; ++x)
        for (std::size_t o = 0; o < d; ++o) {
          const double g = upstream(f, y, x, o) * inv;
          for (std::size_t i = 0; i < pw; ++i)
            for (std::size_t j = 0; j < pw; ++j) {
              const std::size_t yy = y * ps + i, xx = x * ps + j;
              if (pre(f, yy, xx, o) > 0.0) g_pre(f, yy, xx, o) += g;
            }
        }

  ExtractorGrads grads;
  grads.filters = Tensor4(p.filters.dims());
  grads.biases.assign(d, 0.0);
  if (input_grad) grads.frames = Tensor4(cache.input.dims());
  for (std::size_t f = 0; f < L; ++f)
    for (std::size_t y = 0; y < ch; ++y)
      for (std::size_t x = 0; x < cw; ++x)
        for (std::size_t o = 0; o < d; ++o) {
          const double g = g_pre(f, y, x, o);
          if (g == 0.0) continue;
          grads.biases[o] += g;
          for (std::size_t i = 0; i < kh; ++i)
            for (std::size_t j = 0; j < kw; ++j) {
              auto in = cache.input.fiber(f, y + i, x + j);
              auto gw = grads.filters.fiber(o, i, j);
              for (std::size_t c = 0; c < Cin; ++c) gw[c] += g * in[c];
              if (input_grad) {
                auto w = p.filters.fiber(o, i, j);
                auto gin = grads.frames.fiber(f, y + i, x + j);
                for (std::size_t c = 0; c < Cin; ++c) gin[c] += g * w[c];
              }
            }
        }
  return grads;
}

}  // namespace fvnet
