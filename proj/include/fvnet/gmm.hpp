#pragma once

// Diagonal-covariance Gaussian mixture layer. Weights are a softmax over
// internal logits alpha, variances are stored as log-variances, and
// posteriors are evaluated in the log domain.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/tensor.hpp"
#include "fvnet/types.hpp"

namespace fvnet {

inline constexpr double kVarianceFloor = 1e-4;

struct GmmParams {
  Vector alpha;       // K
  RowMatrix mean;     // K x n_c
  RowMatrix log_var;  // K x n_c

  std::size_t components() const { return static_cast<std::size_t>(mean.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(mean.cols()); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(alpha.size() + mean.size() + log_var.size()); }
};

/// Raises every log-variance to at least log(kVarianceFloor).
inline void apply_variance_floor(GmmParams& p) {
  const double lo = std::log(kVarianceFloor);
  p.log_var = p.log_var.cwiseMax(lo);
}

inline double log_sum_exp(std::span<const double> a) {
  if (a.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

/// w = softmax(alpha), max-subtracted.
inline Vector mixture_weights(const Vector& alpha) {
  const double m = alpha.maxCoeff();
  Vector w = (alpha.array() - m).exp().matrix();
  return w / w.sum();
}

inline double log_component_density(std::span<const double> x, std::size_t k, const GmmParams& p) {
  const auto nc = p.dim();
  double quad = 0.0, logdet = 0.0;
  for (std::size_t i = 0; i < nc; ++i) {
    const double lv = p.log_var(k, i);
    const double diff = x[i] - p.mean(k, i);
    logdet += lv;
    quad += diff * diff * std::exp(-lv);
  }
  return -0.5 * (static_cast<double>(nc) * std::log(2.0 * std::numbers::pi) + logdet + quad);
}

/// Writes the K posteriors of one descriptor into `out`; returns log u(x),
/// the log of the mixture density.
inline double posterior_fiber(std::span<const double> x, const GmmParams& p, std::span<double> out) {
  const auto K = p.components();
  const double log_norm = log_sum_exp({p.alpha.data(), K});
  for (std::size_t k = 0; k < K; ++k) out[k] = p.alpha(k) - log_norm + log_component_density(x, k, p);
  const double lse = log_sum_exp(out.first(K));
  for (std::size_t k = 0; k < K; ++k) out[k] = std::exp(out[k] - lse);
  return lse;
}

inline Vector posteriors(const Vector& x, const GmmParams& p) {
  if (static_cast<std::size_t>(x.size()) != p.dim()) {
    throw ShapeError("GMM input has " + std::to_string(x.size()) + " entries, expected " + std::to_string(p.dim()));
  }
  Vector out(p.components());
  posterior_fiber({x.data(), p.dim()}, p, {out.data(), p.components()});
  return out;
}

/// Per-fiber posteriors: (n, h, w, n_c) -> (n, h, w, K).
inline Tensor4 posteriors(const Tensor4& x, const GmmParams& p) {
  const auto [n, h, w, nc] = x.dims();
  if (nc != p.dim()) {
    throw ShapeError("GMM input fibers have " + std::to_string(nc) + " entries, expected " + std::to_string(p.dim()));
  }
  Tensor4 out({n, h, w, p.components()});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < h; ++b)
      for (std::size_t c = 0; c < w; ++c) posterior_fiber(x.fiber(a, b, c), p, out.fiber(a, b, c));
  return out;
}

/// Mean per-sample log-likelihood of the rows of `samples`.
inline double mean_log_likelihood(const RowMatrix& samples, const GmmParams& p) {
  std::vector<double> scratch(p.components());
  double total = 0.0;
  for (Eigen::Index r = 0; r < samples.rows(); ++r) {
    total += posterior_fiber({samples.row(r).data(), p.dim()}, p, scratch);
  }
  return total / static_cast<double>(samples.rows());
}

struct EmOptions {
  std::size_t components = 8;
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;  // on the gain in mean per-sample log-likelihood
  std::uint64_t seed = 1;
  std::size_t seeding_subsample = 2000;
};

struct EmResult {
  GmmParams params;
  std::vector<double> log_likelihood;  // mean per-sample, one entry per E-step
  std::size_t reinitialized = 0;
};

namespace detail {

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

// k-means++ centres picked from a random subsample.
inline RowMatrix kmeans_pp_seeds(const RowMatrix& samples, std::size_t K, std::size_t subsample, Rng& rng) {
  const auto N = static_cast<std::size_t>(samples.rows());
  const auto n = static_cast<std::size_t>(samples.cols());
  std::vector<std::size_t> pool(N);
  for (std::size_t i = 0; i < N; ++i) pool[i] = i;
  rng.shuffle(std::span<std::size_t>(pool));
  pool.resize(std::min(N, std::max(subsample, K)));

  RowMatrix centres(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  std::vector<double> dist(pool.size(), std::numeric_limits<double>::infinity());
  std::size_t pick = pool[rng.index(pool.size())];
  for (std::size_t k = 0; k < K; ++k) {
    centres.row(static_cast<Eigen::Index>(k)) = samples.row(static_cast<Eigen::Index>(pick));
    double total = 0.0;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      dist[i] = std::min(dist[i], squared_distance(samples.row(static_cast<Eigen::Index>(pool[i])).data(),
                                                   centres.row(static_cast<Eigen::Index>(k)).data(), n));
      total += dist[i];
    }
    if (k + 1 == K) break;
    if (total <= 0.0) {
      pick = pool[rng.index(pool.size())];
      continue;
    }
    double target = rng.uniform() * total;
    std::size_t chosen = pool.size() - 1;
    for (std::size_t i = 0; i < pool.size(); ++i) {
      target -= dist[i];
      if (target < 0.0) {
        chosen = i;
        break;
      }
    }
    pick = pool[chosen];
  }
  return centres;
}

}  // namespace detail

/// Fits a diagonal GMM: k-means++ seeding, one hard-assignment pass, then EM
/// until the mean log-likelihood gain drops below the tolerance or the
/// iteration budget runs out. Variances are floored at kVarianceFloor and the
/// logits are stored as alpha = ln w - max ln w.
inline EmResult em_fit(const RowMatrix& samples, const EmOptions& opt) {
  const auto N = static_cast<std::size_t>(samples.rows());
  const auto n = static_cast<std::size_t>(samples.cols());
  const auto K = opt.components;
  if (K < 1) throw ConfigError("GMM needs at least one component");
  if (N < K) throw ConfigError("EM needs at least K samples (" + std::to_string(N) + " < " + std::to_string(K) + ")");
  Rng rng(opt.seed);

  const Vector global_mean = samples.colwise().mean().transpose();
  Vector global_var = (samples.rowwise() - global_mean.transpose()).array().square().colwise().mean().transpose();
  global_var = global_var.cwiseMax(kVarianceFloor);

  GmmParams p;
  p.mean = detail::kmeans_pp_seeds(samples, K, opt.seeding_subsample, rng);
  p.log_var.resize(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(n));
  p.alpha.resize(static_cast<Eigen::Index>(K));

  RowMatrix resp = RowMatrix::Zero(static_cast<Eigen::Index>(N), static_cast<Eigen::Index>(K));
  for (std::size_t t = 0; t < N; ++t) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < K; ++k) {
      const double d = detail::squared_distance(samples.row(static_cast<Eigen::Index>(t)).data(),
                                                p.mean.row(static_cast<Eigen::Index>(k)).data(), n);
      if (d < best_d) {
        best_d = d;
        best = k;
      }
    }
    resp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(best)) = 1.0;
  }

  EmResult result;
  auto m_step = [&]() {
    Vector wk(static_cast<Eigen::Index>(K));
    for (std::size_t k = 0; k < K; ++k) {
      const auto kk = static_cast<Eigen::Index>(k);
      double nk = 0.0;
      for (std::size_t t = 0; t < N; ++t) nk += resp(static_cast<Eigen::Index>(t), kk);
      if (nk < 1e-10) {
        // Empty component: restart it on a jittered random sample.
        const auto s = static_cast<Eigen::Index>(rng.index(N));
        for (std::size_t i = 0; i < n; ++i) {
          const auto ii = static_cast<Eigen::Index>(i);
          p.mean(kk, ii) = samples(s, ii) + 1e-3 * std::sqrt(global_var(ii)) * rng.normal();
          p.log_var(kk, ii) = std::log(global_var(ii));
        }
        wk(kk) = 1.0 / static_cast<double>(N);
        ++result.reinitialized;
        std::clog << "warning: EM component " << k << " became empty and was reinitialized\n";
        continue;
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        double s1 = 0.0;
        for (std::size_t t = 0; t < N; ++t) s1 += resp(static_cast<Eigen::Index>(t), kk) * samples(static_cast<Eigen::Index>(t), ii);
        const double mu = s1 / nk;
        double s2 = 0.0;
        for (std::size_t t = 0; t < N; ++t) {
          const double d = samples(static_cast<Eigen::Index>(t), ii) - mu;
          s2 += resp(static_cast<Eigen::Index>(t), kk) * d * d;
        }
        p.mean(kk, ii) = mu;
        p.log_var(kk, ii) = std::log(std::max(s2 / nk, kVarianceFloor));
      }
      wk(kk) = nk / static_cast<double>(N);
    }
    wk /= wk.sum();
    p.alpha = wk.array().log().matrix();
    p.alpha.array() -= p.alpha.maxCoeff();
  };

  m_step();  // parameters of the hard assignment
  std::vector<double> scratch(K);
  for (std::size_t it = 0;; ++it) {
    double ll = 0.0;
    for (std::size_t t = 0; t < N; ++t) {
      ll += posterior_fiber({samples.row(static_cast<Eigen::Index>(t)).data(), n}, p, scratch);
      for (std::size_t k = 0; k < K; ++k) resp(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(k)) = scratch[k];
    }
    ll /= static_cast<double>(N);
    const bool converged = !result.log_likelihood.empty() && ll - result.log_likelihood.back() < opt.tolerance;
    result.log_likelihood.push_back(ll);
    if (converged || it == opt.max_iterations) break;
    m_step();
  }
  result.params = std::move(p);
  return result;
}

struct GmmGrads {
  Tensor4 x;
  Vector alpha;
  RowMatrix mean;
  RowMatrix log_var;

  static GmmGrads zeros(const Dims4& input, const GmmParams& p) {
    return {Tensor4(input), Vector::Zero(p.alpha.size()), RowMatrix::Zero(p.mean.rows(), p.mean.cols()),
            RowMatrix::Zero(p.log_var.rows(), p.log_var.cols())};
  }
};

/// Accumulates into `g` the gradients of one descriptor's posteriors, given
/// the upstream gradient wrt those posteriors. `gx` receives dL/dx.
inline void posterior_fiber_backward(std::span<const double> upstream, std::span<const double> x,
                                     const GmmParams& p, std::span<double> gx, GmmGrads& g,
                                     std::span<double> scratch) {
  const auto K = p.components(), nc = p.dim();
  posterior_fiber(x, p, scratch);
  double mean_up = 0.0;
  for (std::size_t k = 0; k < K; ++k) mean_up += scratch[k] * upstream[k];
  for (std::size_t k = 0; k < K; ++k) {
    // Gradient wrt the k-th logit of the posterior softmax; the normalizer of
    // alpha is common to all components and cancels.
    const double da = scratch[k] * (upstream[k] - mean_up);
    if (da == 0.0) continue;
    g.alpha(k) += da;
    for (std::size_t i = 0; i < nc; ++i) {
      const double inv_var = std::exp(-p.log_var(k, i));
      const double diff = x[i] - p.mean(k, i);
      g.mean(k, i) += da * diff * inv_var;
      g.log_var(k, i) += da * 0.5 * (diff * diff * inv_var - 1.0);
      gx[i] -= da * diff * inv_var;
    }
  }
}

inline GmmGrads posteriors_backward(const Tensor4& upstream, const Tensor4& x, const GmmParams& p) {
  const auto [n, h, w, nc] = x.dims();
  if (nc != p.dim() || upstream.dims() != Dims4{n, h, w, p.components()}) {
    throw ShapeError("GMM backward: upstream dims " + to_string(upstream.dims()) + " do not match input " +
                     to_string(x.dims()));
  }
  auto g = GmmGrads::zeros(x.dims(), p);
  std::vector<double> scratch(p.components());
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < h; ++b)
      for (std::size_t c = 0; c < w; ++c)
        posterior_fiber_backward(upstream.fiber(a, b, c), x.fiber(a, b, c), p, g.x.fiber(a, b, c), g, scratch);
  return g;
}

}  // namespace fvnet
