#pragma once

// Spatio-temporal mean pooling of t feature maps into D-dimensional
// descriptors on a sliding spatial grid.
//
// Each grid position covers an (n_sigma*S_h) x (n_sigma*S_w) x t block, split
// into n_sigma x n_sigma x n_tau cells of S_h x S_w x (t / n_tau). Cell means
// are concatenated temporal cell first, then cell row, cell column, channel:
//   index = ((tau * n_sigma + row) * n_sigma + col) * d + channel

#include <cstddef>
#include <string>
#include <utility>

#include "fvnet/error.hpp"
#include "fvnet/tensor.hpp"

namespace fvnet {

struct PoolConfig {
  std::size_t n_sigma = 2;
  std::size_t n_tau = 3;
  std::size_t cell_h = 7;
  std::size_t cell_w = 7;
  std::size_t frames = 15;  // t
  std::size_t stride = 7;   // delta_S

  std::size_t window_h() const { return n_sigma * cell_h; }
  std::size_t window_w() const { return n_sigma * cell_w; }
  std::size_t descriptor_dim(std::size_t d) const { return n_sigma * n_sigma * n_tau * d; }

  friend bool operator==(const PoolConfig&, const PoolConfig&) = default;
};

inline void validate(const PoolConfig& cfg) {
  if (cfg.n_sigma < 1 || cfg.n_tau < 1) throw ConfigError("pooling cell counts must be >= 1");
  if (cfg.cell_h < 1 || cfg.cell_w < 1) throw ConfigError("pooling cell sizes must be >= 1");
  if (cfg.stride < 1) throw ConfigError("pooling stride must be >= 1");
  if (cfg.frames < 1 || cfg.frames % cfg.n_tau != 0) {
    throw ConfigError("window length t=" + std::to_string(cfg.frames) + " is not divisible by n_tau=" +
                      std::to_string(cfg.n_tau));
  }
}

/// Grid extent (F_h', F_w') over feature maps of size (F_h, F_w).
inline std::pair<std::size_t, std::size_t> pool_output_dims(std::size_t fh, std::size_t fw, const PoolConfig& cfg) {
  validate(cfg);
  if (fh < cfg.window_h() || fw < cfg.window_w()) {
    throw ShapeError("pooling window " + std::to_string(cfg.window_h()) + "x" + std::to_string(cfg.window_w()) +
                     " larger than feature map " + std::to_string(fh) + "x" + std::to_string(fw));
  }
  return {(fh - cfg.window_h()) / cfg.stride + 1, (fw - cfg.window_w()) / cfg.stride + 1};
}

/// (t, F_h, F_w, d) maps -> (1, F_h', F_w', D) descriptors.
inline Tensor4 pool(const Tensor4& maps, const PoolConfig& cfg) {
  const auto [t, fh, fw, d] = maps.dims();
  if (t != cfg.frames) {
    throw ShapeError("pooling expects " + std::to_string(cfg.frames) + " frames, got " + std::to_string(t));
  }
  const auto [oh, ow] = pool_output_dims(fh, fw, cfg);
  const std::size_t tc = t / cfg.n_tau;
  const double inv = 1.0 / static_cast<double>(cfg.cell_h * cfg.cell_w * tc);
  Tensor4 out({1, oh, ow, cfg.descriptor_dim(d)});
  for (std::size_t gy = 0; gy < oh; ++gy)
    for (std::size_t gx = 0; gx < ow; ++gx) {
      auto desc = out.fiber(0, gy, gx);
      std::size_t idx = 0;
      for (std::size_t tau = 0; tau < cfg.n_tau; ++tau)
        for (std::size_t r = 0; r < cfg.n_sigma; ++r)
          for (std::size_t c = 0; c < cfg.n_sigma; ++c, idx += d) {
            const std::size_t y0 = gy * cfg.stride + r * cfg.cell_h;
            const std::size_t x0 = gx * cfg.stride + c * cfg.cell_w;
            for (std::size_t f = tau * tc; f < (tau + 1) * tc; ++f)
              for (std::size_t y = y0; y < y0 + cfg.cell_h; ++y)
                for (std::size_t x = x0; x < x0 + cfg.cell_w; ++x) {
                  auto in = maps.fiber(f, y, x);
                  for (std::size_t ch = 0; ch < d; ++ch) desc[idx + ch] += in[ch];
                }
            for (std::size_t ch = 0; ch < d; ++ch) desc[idx + ch] *= inv;
          }
    }
  return out;
}

/// Adjoint of pool: every map entry receives 1/cell_size times the sum of the
/// upstream entries of the cells containing it.
inline Tensor4 pool_backward(const Tensor4& upstream, const PoolConfig& cfg, const Dims4& input_dims) {
  const auto [t, fh, fw, d] = input_dims;
  if (t != cfg.frames) throw ShapeError("pool backward: input dims do not match the configured window");
  const auto [oh, ow] = pool_output_dims(fh, fw, cfg);
  if (upstream.dims() != Dims4{1, oh, ow, cfg.descriptor_dim(d)}) {
    throw ShapeError("pool backward: upstream dims " + to_string(upstream.dims()) + ", expected " +
                     to_string(Dims4{1, oh, ow, cfg.descriptor_dim(d)}));
  }
  const std::size_t tc = t / cfg.n_tau;
  const double inv = 1.0 / static_cast<double>(cfg.cell_h * cfg.cell_w * tc);
  Tensor4 grad(input_dims);
  for (std::size_t gy = 0; gy < oh; ++gy)
    for (std::size_t gx = 0; gx < ow; ++gx) {
      auto g = upstream.fiber(0, gy, gx);
      std::size_t idx = 0;
      for (std::size_t tau = 0; tau < cfg.n_tau; ++tau)
        for (std::size_t r = 0; r < cfg.n_sigma; ++r)
          for (std::size_t c = 0; c < cfg.n_sigma; ++c, idx += d) {
            const std::size_t y0 = gy * cfg.stride + r * cfg.cell_h;
            const std::size_t x0 = gx * cfg.stride + c * cfg.cell_w;
            for (std::size_t f = tau * tc; f < (tau + 1) * tc; ++f)
              for (std::size_t y = y0; y < y0 + cfg.cell_h; ++y)
                for (std::size_t x = x0; x < x0 + cfg.cell_w; ++x) {
                  auto out = grad.fiber(f, y, x);
                  for (std::size_t ch = 0; ch < d; ++ch) out[ch] += g[idx + ch] * inv;
                }
          }
    }
  return grad;
}

}  // namespace fvnet
