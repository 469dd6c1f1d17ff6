#pragma once

// Fisher-vector layer: zeroth/first/second order statistics of descriptors
// under the GMM posteriors, the unnormalized FV built from them, and the
// power + L2 normalization. Statistics are additive, so windows and crops are
// handled by accumulating or merging.

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/gmm.hpp"
#include "fvnet/tensor.hpp"
#include "fvnet/types.hpp"

namespace fvnet {

inline constexpr double kL2Epsilon = 1e-12;
inline constexpr double kPowerNormSmoothing = 1e-8;

inline std::size_t fv_dim(std::size_t K, std::size_t n_c) { return K * (2 * n_c + 1); }

struct FvAccumulator {
  Vector s0;     // K
  RowMatrix s1;  // K x n_c
  RowMatrix s2;  // K x n_c
  double count = 0.0;  // T, the number of descriptors accumulated

  static FvAccumulator zeros(std::size_t K, std::size_t n_c) {
    const auto k = static_cast<Eigen::Index>(K), n = static_cast<Eigen::Index>(n_c);
    return {Vector::Zero(k), RowMatrix::Zero(k, n), RowMatrix::Zero(k, n), 0.0};
  }
  std::size_t components() const { return static_cast<std::size_t>(s1.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(s1.cols()); }

  friend bool operator==(const FvAccumulator& a, const FvAccumulator& b) {
    return a.count == b.count && a.s0 == b.s0 && a.s1 == b.s1 && a.s2 == b.s2;
  }
};

/// Spatial rectangle [h0, h0 + h) x [w0, w0 + w) in descriptor-grid coordinates.
struct Region {
  std::size_t h0 = 0, w0 = 0, h = 0, w = 0;
  friend bool operator==(const Region&, const Region&) = default;
};

namespace detail {

inline Region resolve_region(const Dims4& dims, const std::optional<Region>& region) {
  if (!region) return {0, 0, dims[1], dims[2]};
  const Region& r = *region;
  if (r.h0 > dims[1] || r.h > dims[1] - r.h0 || r.w0 > dims[2] || r.w > dims[2] - r.w0) {
    throw BoundsError("region (" + std::to_string(r.h0) + "," + std::to_string(r.w0) + ")+(" + std::to_string(r.h) +
                      "," + std::to_string(r.w) + ") exceeds descriptor grid " + std::to_string(dims[1]) + "x" +
                      std::to_string(dims[2]));
  }
  return r;
}

}  // namespace detail

/// Adds the statistics of every descriptor fiber of `x` inside `region`
/// (whole grid when absent). `gamma` holds the matching posteriors.
inline FvAccumulator accumulate(FvAccumulator acc, const Tensor4& x, const Tensor4& gamma,
                                const std::optional<Region>& region = std::nullopt) {
  const auto [n, h, w, nc] = x.dims();
  if (gamma.dims() != Dims4{n, h, w, acc.components()} || nc != acc.dim()) {
    throw ShapeError("accumulate: descriptors " + to_string(x.dims()) + " and posteriors " + to_string(gamma.dims()) +
                     " are not aligned with a K=" + std::to_string(acc.components()) +
                     ", n_c=" + std::to_string(acc.dim()) + " accumulator");
  }
  const Region r = detail::resolve_region(x.dims(), region);
  const auto K = acc.components();
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = r.h0; b < r.h0 + r.h; ++b)
      for (std::size_t c = r.w0; c < r.w0 + r.w; ++c) {
        auto xf = x.fiber(a, b, c);
        auto gf = gamma.fiber(a, b, c);
        for (std::size_t k = 0; k < K; ++k) {
          const double g = gf[k];
          acc.s0(k) += g;
          for (std::size_t i = 0; i < nc; ++i) {
            acc.s1(k, i) += g * xf[i];
            acc.s2(k, i) += g * xf[i] * xf[i];
          }
        }
        acc.count += 1.0;
      }
  return acc;
}

inline FvAccumulator merge(const FvAccumulator& a, const FvAccumulator& b) {
  if (a.components() != b.components() || a.dim() != b.dim()) {
    throw ShapeError("merge: accumulators have different K or n_c");
  }
  return {a.s0 + b.s0, a.s1 + b.s1, a.s2 + b.s2, a.count + b.count};
}

/// Unnormalized FV, blocks ordered (G_w for all k, G_mu for all k, G_sigma for all k).
inline Vector fv_from_stats(const FvAccumulator& acc, const GmmParams& p) {
  const auto K = p.components(), nc = p.dim();
  if (acc.components() != K || acc.dim() != nc) throw ShapeError("fv_from_stats: accumulator does not match GMM");
  const Vector w = mixture_weights(p.alpha);
  Vector fv(static_cast<Eigen::Index>(fv_dim(K, nc)));
  const std::size_t mu_off = K, sigma_off = K + K * nc;
  for (std::size_t k = 0; k < K; ++k) {
    const double sw = std::sqrt(w(k));
    fv(k) = (acc.s0(k) - acc.count * w(k)) / sw;
    for (std::size_t i = 0; i < nc; ++i) {
      const double mu = p.mean(k, i);
      const double var = std::exp(p.log_var(k, i));
      const double sigma = std::exp(0.5 * p.log_var(k, i));
      fv(mu_off + k * nc + i) = (acc.s1(k, i) - mu * acc.s0(k)) / (sw * sigma);
      fv(sigma_off + k * nc + i) =
          (acc.s2(k, i) - 2.0 * mu * acc.s1(k, i) + (mu * mu - var) * acc.s0(k)) / (std::sqrt(2.0) * sw * var);
    }
  }
  return fv;
}

/// sign(z) sqrt(|z|) elementwise. Not idempotent.
inline Vector power_normalize(const Vector& v) {
  return v.unaryExpr([](double z) { return std::copysign(std::sqrt(std::abs(z)), z); });
}

inline Vector l2_normalize(const Vector& v) { return v / std::max(v.norm(), kL2Epsilon); }

struct FisherVector {
  Vector values;
  bool normalized = false;  // false for the raw FV and for an all-zero input
};

inline FisherVector normalize_fv(const Vector& raw, bool power = true) {
  const Vector p = power ? power_normalize(raw) : raw;
  const double norm = p.norm();
  return {l2_normalize(p), norm > 0.0};
}

/// Gradient wrt the raw FV given the gradient wrt its normalized form. The
/// power-norm derivative is smoothed: 1 / (2 sqrt(|z| + kPowerNormSmoothing)).
inline Vector normalize_backward(const Vector& upstream, const Vector& raw, bool power = true) {
  const Vector p = power ? power_normalize(raw) : raw;
  const double norm = p.norm();
  Vector gp;
  if (norm > kL2Epsilon) {
    const Vector n = p / norm;
    gp = (upstream - n * n.dot(upstream)) / norm;
  } else {
    gp = upstream / kL2Epsilon;
  }
  if (!power) return gp;
  return gp.binaryExpr(raw, [](double g, double z) { return g / (2.0 * std::sqrt(std::abs(z) + kPowerNormSmoothing)); });
}

struct FvStatsGrads {
  Vector s0;
  RowMatrix s1;
  RowMatrix s2;
  Vector alpha;
  RowMatrix mean;
  RowMatrix log_var;
};

/// Adjoint of fv_from_stats wrt the statistics and the GMM parameters. The
/// descriptor count is not differentiable.
inline FvStatsGrads fv_from_stats_backward(const Vector& upstream, const FvAccumulator& acc, const GmmParams& p) {
  const auto K = p.components(), nc = p.dim();
  if (static_cast<std::size_t>(upstream.size()) != fv_dim(K, nc)) throw ShapeError("FV backward: wrong upstream size");
  const auto k_ = static_cast<Eigen::Index>(K), n_ = static_cast<Eigen::Index>(nc);
  FvStatsGrads g{Vector::Zero(k_), RowMatrix::Zero(k_, n_), RowMatrix::Zero(k_, n_), Vector::Zero(k_),
                 RowMatrix::Zero(k_, n_), RowMatrix::Zero(k_, n_)};
  const Vector w = mixture_weights(p.alpha);
  Vector gw = Vector::Zero(k_);
  const std::size_t mu_off = K, sigma_off = K + K * nc;
  const double r2 = std::sqrt(2.0);
  for (std::size_t k = 0; k < K; ++k) {
    const double sw = std::sqrt(w(k));
    const double s0 = acc.s0(k), T = acc.count;
    // G_w = (S0 - T w) / sqrt(w)
    const double u_w = upstream(k);
    g.s0(k) += u_w / sw;
    gw(k) += u_w * (-0.5 * s0 / (w(k) * sw) - 0.5 * T / sw);
    for (std::size_t i = 0; i < nc; ++i) {
      const double mu = p.mean(k, i);
      const double var = std::exp(p.log_var(k, i));
      const double sigma = std::exp(0.5 * p.log_var(k, i));
      const double s1 = acc.s1(k, i), s2 = acc.s2(k, i);

      // G_mu = (S1 - mu S0) / (sqrt(w) sigma)
      const double u_mu = upstream(mu_off + k * nc + i);
      const double g_mu = (s1 - mu * s0) / (sw * sigma);
      g.s1(k, i) += u_mu / (sw * sigma);
      g.s0(k) -= u_mu * mu / (sw * sigma);
      g.mean(k, i) -= u_mu * s0 / (sw * sigma);
      gw(k) -= u_mu * 0.5 * g_mu / w(k);
      g.log_var(k, i) -= u_mu * 0.5 * g_mu;

      // G_sigma = (S2 - 2 mu S1 + (mu^2 - var) S0) / (sqrt(2 w) var)
      const double u_s = upstream(sigma_off + k * nc + i);
      const double den = r2 * sw * var;
      const double g_s = (s2 - 2.0 * mu * s1 + (mu * mu - var) * s0) / den;
      g.s2(k, i) += u_s / den;
      g.s1(k, i) -= u_s * 2.0 * mu / den;
      g.s0(k) += u_s * (mu * mu - var) / den;
      g.mean(k, i) += u_s * (2.0 * mu * s0 - 2.0 * s1) / den;
      gw(k) -= u_s * 0.5 * g_s / w(k);
      g.log_var(k, i) += u_s * (-s0 / (r2 * sw) - g_s);
    }
  }
  // Through w = softmax(alpha).
  const double wg = w.dot(gw);
  g.alpha = (w.array() * (gw.array() - wg)).matrix();
  return g;
}

/// Forward state kept for fv_backward.
struct FvCache {
  std::vector<Tensor4> descriptors;  // one (1, F_h', F_w', n_c) tensor per window
  std::optional<Region> region;
  FvAccumulator stats;
  Vector raw;
  bool power = true;
};

struct FvGrads {
  std::vector<Tensor4> descriptors;  // same shapes as the cached descriptors
  GmmGrads gmm;                      // gmm.x is unused
};

/// Encodes descriptors (merged over windows, restricted to `region`) into a
/// normalized FV; fills `cache` for the backward pass when given.
inline FisherVector fv_encode(const std::vector<Tensor4>& descriptors, const GmmParams& p,
                              const std::optional<Region>& region = std::nullopt, bool power = true,
                              FvCache* cache = nullptr) {
  auto acc = FvAccumulator::zeros(p.components(), p.dim());
  for (const auto& x : descriptors) acc = accumulate(std::move(acc), x, posteriors(x, p), region);
  Vector raw = fv_from_stats(acc, p);
  auto fv = normalize_fv(raw, power);
  if (cache) *cache = {descriptors, region, std::move(acc), std::move(raw), power};
  return fv;
}

/// Adjoint of fv_encode: gradients wrt every cached descriptor fiber and the
/// GMM parameters, through the direct terms of the FV and through the posteriors.
inline FvGrads fv_backward(const Vector& upstream, const FvCache& cache, const GmmParams& p) {
  if (cache.raw.size() == 0) throw ShapeError("FV backward called without a forward cache");
  const auto K = p.components(), nc = p.dim();
  const Vector g_raw = normalize_backward(upstream, cache.raw, cache.power);
  const FvStatsGrads gs = fv_from_stats_backward(g_raw, cache.stats, p);

  FvGrads out;
  out.gmm = GmmGrads::zeros({0, 0, 0, 0}, p);
  out.gmm.alpha = gs.alpha;
  out.gmm.mean = gs.mean;
  out.gmm.log_var = gs.log_var;
  std::vector<double> gamma(K), g_gamma(K), scratch(K);
  for (const auto& x : cache.descriptors) {
    Tensor4 gx(x.dims());
    const Region r = detail::resolve_region(x.dims(), cache.region);
    for (std::size_t a = 0; a < x.dim(0); ++a)
      for (std::size_t b = r.h0; b < r.h0 + r.h; ++b)
        for (std::size_t c = r.w0; c < r.w0 + r.w; ++c) {
          auto xf = x.fiber(a, b, c);
          auto gxf = gx.fiber(a, b, c);
          posterior_fiber(xf, p, gamma);
          for (std::size_t k = 0; k < K; ++k) {
            double gg = gs.s0(k);
            for (std::size_t i = 0; i < nc; ++i) {
              gg += gs.s1(k, i) * xf[i] + gs.s2(k, i) * xf[i] * xf[i];
              gxf[i] += gamma[k] * (gs.s1(k, i) + 2.0 * gs.s2(k, i) * xf[i]);
            }
            g_gamma[k] = gg;
          }
          posterior_fiber_backward(g_gamma, xf, p, gxf, out.gmm, scratch);
        }
    out.descriptors.push_back(std::move(gx));
  }
  return out;
}

}  // namespace fvnet
