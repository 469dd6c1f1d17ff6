#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>

#include "fvnet/error.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/tensor.hpp"

namespace fvnet {

namespace detail {
inline void require_same_size(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": parameter and state sizes differ");
}
}  // namespace detail

/// v <- momentum v - lr g;  param <- param + v
inline void sgd_momentum_step(std::span<double> param, std::span<const double> grad, std::span<double> velocity,
                              double lr, double momentum) {
  detail::require_same_size(param.size(), grad.size(), "sgd_momentum_step");
  detail::require_same_size(param.size(), velocity.size(), "sgd_momentum_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    velocity[i] = momentum * velocity[i] - lr * grad[i];
    param[i] += velocity[i];
  }
}

inline constexpr double kAdagradEpsilon = 1e-8;

/// accum <- accum + g^2;  param <- param - lr g / (sqrt(accum) + eps)
inline void adagrad_step(std::span<double> param, std::span<const double> grad, std::span<double> accum, double lr,
                         double eps = kAdagradEpsilon) {
  detail::require_same_size(param.size(), grad.size(), "adagrad_step");
  detail::require_same_size(param.size(), accum.size(), "adagrad_step");
  for (std::size_t i = 0; i < param.size(); ++i) {
    accum[i] += grad[i] * grad[i];
    param[i] -= lr * grad[i] / (std::sqrt(accum[i]) + eps);
  }
}

struct DropoutResult {
  Tensor4 output;
  Tensor4 mask;  // 0 for dropped entries, 1 / (1 - p) for kept ones
};

/// Inverted dropout with drop probability p. Outside training it is the identity.
inline DropoutResult dropout_forward(const Tensor4& x, double p, Rng& rng, bool training) {
  if (!(p >= 0.0 && p < 1.0)) throw ConfigError("dropout probability must be in [0, 1)");
  if (!training || p == 0.0) return {x, Tensor4(x.dims(), 1.0)};
  const double keep_scale = 1.0 / (1.0 - p);
  DropoutResult r{Tensor4(x.dims()), Tensor4(x.dims())};
  auto in = x.values();
  auto out = r.output.values();
  auto mask = r.mask.values();
  for (std::size_t i = 0; i < in.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    out[i] = in[i] * mask[i];
  }
  return r;
}

inline DropoutResult dropout_forward(const Tensor4& x, double p, std::uint64_t seed, bool training) {
  Rng rng(seed);
  return dropout_forward(x, p, rng, training);
}

inline Tensor4 dropout_backward(const Tensor4& upstream, const Tensor4& mask) {
  if (upstream.dims() != mask.dims()) throw ShapeError("dropout backward: mask shape mismatch");
  Tensor4 g(upstream.dims());
  auto u = upstream.values();
  auto m = mask.values();
  auto out = g.values();
  for (std::size_t i = 0; i < u.size(); ++i) out[i] = u[i] * m[i];
  return g;
}

}  // namespace fvnet
