#pragma once

// Central finite-difference verification of every backward pass.
//
// Each check builds a scalar probe loss on top of one layer (a fixed random
// linear functional of the layer output, or the classifier loss), compares
// the analytic gradient of every input and parameter coordinate against
// (f(v + h) - f(v - h)) / 2h, and reports the largest relative error
//   |a - n| / max(|a|, |n|, 1e-8).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fvnet/bundle.hpp"
#include "fvnet/classifier.hpp"
#include "fvnet/error.hpp"
#include "fvnet/extractor.hpp"
#include "fvnet/fisher.hpp"
#include "fvnet/gmm.hpp"
#include "fvnet/network.hpp"
#include "fvnet/projection.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/st_pool.hpp"

namespace fvnet {

enum class GradLayer { extractor, pool, projection, gmm, fisher_unpowered, fisher, classifier, chain, chain_power };

inline const std::vector<GradLayer>& all_grad_layers() {
  static const std::vector<GradLayer> layers{GradLayer::extractor,        GradLayer::pool,       GradLayer::projection,
                                             GradLayer::gmm,              GradLayer::fisher_unpowered,
                                             GradLayer::fisher,           GradLayer::classifier, GradLayer::chain,
                                             GradLayer::chain_power};
  return layers;
}

inline std::string to_string(GradLayer l) {
  switch (l) {
    case GradLayer::extractor: return "extractor";
    case GradLayer::pool: return "pool";
    case GradLayer::projection: return "projection";
    case GradLayer::gmm: return "gmm";
    case GradLayer::fisher_unpowered: return "fisher-unpowered";
    case GradLayer::fisher: return "fisher";
    case GradLayer::classifier: return "classifier";
    case GradLayer::chain: return "chain";
    case GradLayer::chain_power: return "chain-power";
  }
  return "?";
}

inline GradLayer parse_grad_layer(const std::string& s) {
  for (auto l : all_grad_layers()) {
    if (to_string(l) == s) return l;
  }
  throw ConfigError("unknown gradient-check layer '" + s + "'");
}

/// Pass threshold per check. Stages behind the smoothed power normalization
/// get the looser bound.
inline double grad_tolerance(GradLayer l) {
  switch (l) {
    case GradLayer::projection: return 1e-9;
    case GradLayer::pool:
    case GradLayer::classifier: return 1e-6;
    case GradLayer::fisher:
    case GradLayer::chain_power: return 1e-3;
    default: return 1e-4;
  }
}

/// Step used for a check. Central differences are exact for affine maps at
/// any step, so those layers use a unit step that keeps rounding noise out of
/// the comparison.
inline double grad_step(GradLayer l, double h) {
  return l == GradLayer::pool || l == GradLayer::projection ? 1.0 : h;
}

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

struct GradCheckEntry {
  GradLayer layer;
  double max_relative_error = 0.0;
  std::string worst;  // "<group>[<index>]" of the worst coordinate
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates = 0;
  double tolerance = 0.0;
  bool pass() const { return max_relative_error < tolerance; }
};

/// Compares analytic gradients of `loss` against central differences for
/// every coordinate of the given groups. `loss` is re-evaluated with the
/// perturbed values in place.
inline void compare_groups(GradCheckEntry& entry, const std::function<double()>& loss,
                           const std::vector<std::pair<std::string, std::span<double>>>& values,
                           const std::vector<std::span<const double>>& analytic, double h) {
  for (std::size_t g = 0; g < values.size(); ++g) {
    auto v = values[g].second;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = loss();
      v[i] = orig - h;
      const double down = loss();
      v[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double err = relative_error(analytic[g][i], numeric);
      if (err > entry.max_relative_error || entry.worst.empty()) {
        entry.max_relative_error = err;
        entry.worst = values[g].first + "[" + std::to_string(i) + "]";
        entry.worst_analytic = analytic[g][i];
        entry.worst_numeric = numeric;
      }
      ++entry.coordinates;
    }
  }
}

/// A small random network plus probe video sized so that every check runs in
/// well under a second. Frames are redrawn until no convolution
/// pre-activation lies within 1e-3 of the ReLU kink and no raw FV entry lies
/// within 0.1 of the square-root cusp. Raw entries here move by up to ~1e-3
/// under a step of 1e-5; closer to the cusp the curvature swamps the
/// difference quotient.
struct GradCheckProblem {
  ModelBundle bundle;
  Tensor4 video;  // prepared input: LCN is off in this bundle
  std::size_t temporal_stride = 2;
  CropSpec crops{{Region{0, 0, 2, 2}, Region{1, 1, 2, 2}}, true};
  std::size_t label = 0;
  std::uint64_t seed = 0;
};

inline GradCheckProblem make_gradcheck_problem(std::uint64_t seed) {
  Rng rng(seed);
  GradCheckProblem p;
  p.seed = seed;
  auto& b = p.bundle;
  b.input = InputKind::frames;
  b.lcn = false;
  b.extractor = random_extractor(2, 3, 3, 1, 2, 2, rng, 0.5);
  for (double& v : b.extractor->biases) v = rng.normal(0.0, 0.1);
  b.pool = {2, 2, 1, 1, 4, 1};
  const std::size_t D = b.pool.descriptor_dim(2), nc = 3, K = 2, m = 3;
  b.projection.mean = Vector::NullaryExpr(static_cast<Eigen::Index>(D), [&] { return rng.normal(0.0, 0.1); });
  b.projection.axes = RowMatrix::NullaryExpr(static_cast<Eigen::Index>(nc), static_cast<Eigen::Index>(D),
                                             [&] { return rng.normal(0.0, 0.5); });
  b.gmm.alpha = Vector::NullaryExpr(static_cast<Eigen::Index>(K), [&] { return rng.normal(0.0, 0.3); });
  b.gmm.mean = RowMatrix::NullaryExpr(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(nc),
                                      [&] { return rng.normal(0.0, 0.5); });
  b.gmm.log_var = RowMatrix::NullaryExpr(static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(nc),
                                         [&] { return rng.normal(0.0, 0.2); });
  b.svm = zero_svm(m, fv_dim(K, nc), 100.0, 10);
  b.svm.weights = RowMatrix::NullaryExpr(b.svm.weights.rows(), b.svm.weights.cols(), [&] { return rng.normal(0.0, 0.5); });
  b.svm.bias = Vector::NullaryExpr(static_cast<Eigen::Index>(m), [&] { return rng.normal(0.0, 0.1); });
  p.label = rng.index(m);
  validate(b);

  for (;;) {
    p.video = Tensor4({6, 10, 10, 1});
    for (double& v : p.video.values()) v = rng.normal(0.0, 1.0);
    ForwardOptions opt;
    opt.temporal_stride = p.temporal_stride;
    opt.crops = p.crops;
    const auto fw = forward(p.video, b, opt);
    const auto pre = fw.extractor_cache.preactivation.values();
    const bool smooth = std::all_of(pre.begin(), pre.end(), [](double v) { return std::abs(v) > 1e-3; }) &&
                        std::all_of(fw.fv_caches.begin(), fw.fv_caches.end(),
                                    [](const FvCache& c) { return c.raw.cwiseAbs().minCoeff() > 0.1; });
    if (smooth) break;
  }
  return p;
}

namespace detail {

inline std::vector<double> random_weights(std::size_t n, Rng& rng) {
  std::vector<double> r(n);
  for (double& v : r) v = rng.normal();
  return r;
}

// Extended accumulator so that the unperturbed part of the probe cancels
// exactly and only the perturbed terms contribute rounding noise.
inline double dot(std::span<const double> a, const std::vector<double>& b) {
  long double s = 0.0L;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<long double>(a[i]) * b[i];
  return static_cast<double>(s);
}

inline Tensor4 as_tensor(const Tensor4& like, const std::vector<double>& v) { return Tensor4(like.dims(), v); }

inline std::span<double> span_of(Tensor4& t) { return t.values(); }
inline std::span<const double> cspan(const Tensor4& t) { return t.values(); }
inline std::span<const double> cspan(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> cspan(const RowMatrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }

}  // namespace detail

/// Runs one check on `problem`. The problem is taken by value because the
/// checks perturb it in place.
inline GradCheckEntry grad_check(GradCheckProblem problem, GradLayer layer, double h = 1e-5) {
  using detail::cspan;
  using detail::span_of;
  Rng rng(problem.seed ^ 0x9e3779b97f4a7c15ull);
  GradCheckEntry entry;
  entry.layer = layer;
  entry.tolerance = grad_tolerance(layer);
  auto& b = problem.bundle;
  h = grad_step(layer, h);

  // Intermediate activations of the probe video, used as layer inputs.
  const Tensor4 maps = extract(problem.video, *b.extractor);
  Tensor4 window = frames(maps, 0, b.pool.frames);
  Tensor4 pooled = pool(window, b.pool);
  Tensor4 projected = project(pooled, b.projection);
  std::vector<Tensor4> descriptors{projected, project(pool(frames(maps, 2, b.pool.frames), b.pool), b.projection)};

  switch (layer) {
    case GradLayer::extractor: {
      const auto r = detail::random_weights(maps.size(), rng);
      ExtractorCache cache;
      extract(problem.video, *b.extractor, &cache);
      const auto g = extract_backward(detail::as_tensor(maps, r), cache, *b.extractor);
      auto loss = [&] { return detail::dot(extract(problem.video, *b.extractor).values(), r); };
      compare_groups(entry, loss,
                     {{"frames", span_of(problem.video)},
                      {"filters", span_of(b.extractor->filters)},
                      {"biases", b.extractor->biases}},
                     {cspan(g.frames), cspan(g.filters), g.biases}, h);
      break;
    }
    case GradLayer::pool: {
      const auto r = detail::random_weights(pooled.size(), rng);
      const auto g = pool_backward(detail::as_tensor(pooled, r), b.pool, window.dims());
      auto loss = [&] { return detail::dot(pool(window, b.pool).values(), r); };
      compare_groups(entry, loss, {{"maps", span_of(window)}}, {cspan(g)}, h);
      break;
    }
    case GradLayer::projection: {
      const auto r = detail::random_weights(projected.size(), rng);
      const auto g = project_backward(detail::as_tensor(projected, r), pooled, b.projection);
      auto loss = [&] { return detail::dot(project(pooled, b.projection).values(), r); };
      compare_groups(entry, loss,
                     {{"x", span_of(pooled)},
                      {"mean", detail::span_of(b.projection.mean)},
                      {"axes", detail::span_of(b.projection.axes)}},
                     {cspan(g.x), cspan(g.mean), cspan(g.axes)}, h);
      break;
    }
    case GradLayer::gmm: {
      const Tensor4 gamma = posteriors(projected, b.gmm);
      const auto r = detail::random_weights(gamma.size(), rng);
      const auto g = posteriors_backward(detail::as_tensor(gamma, r), projected, b.gmm);
      auto loss = [&] { return detail::dot(posteriors(projected, b.gmm).values(), r); };
      compare_groups(entry, loss,
                     {{"x", span_of(projected)},
                      {"alpha", detail::span_of(b.gmm.alpha)},
                      {"mean", detail::span_of(b.gmm.mean)},
                      {"log_var", detail::span_of(b.gmm.log_var)}},
                     {cspan(g.x), cspan(g.alpha), cspan(g.mean), cspan(g.log_var)}, h);
      break;
    }
    case GradLayer::fisher_unpowered:
    case GradLayer::fisher: {
      const bool power = layer == GradLayer::fisher;
      FvCache cache;
      const auto fv = fv_encode(descriptors, b.gmm, std::nullopt, power, &cache);
      const auto r = detail::random_weights(static_cast<std::size_t>(fv.values.size()), rng);
      const Vector rv = Eigen::Map<const Vector>(r.data(), static_cast<Eigen::Index>(r.size()));
      const auto g = fv_backward(rv, cache, b.gmm);
      auto loss = [&] { return fv_encode(descriptors, b.gmm, std::nullopt, power).values.dot(rv); };
      compare_groups(entry, loss,
                     {{"x0", span_of(descriptors[0])},
                      {"x1", span_of(descriptors[1])},
                      {"alpha", detail::span_of(b.gmm.alpha)},
                      {"mean", detail::span_of(b.gmm.mean)},
                      {"log_var", detail::span_of(b.gmm.log_var)}},
                     {cspan(g.descriptors[0]), cspan(g.descriptors[1]), cspan(g.gmm.alpha), cspan(g.gmm.mean),
                      cspan(g.gmm.log_var)},
                     h);
      break;
    }
    case GradLayer::classifier: {
      Vector x = fv_encode(descriptors, b.gmm).values;
      const Vector y = one_vs_all_target(problem.label, b.svm.classes());
      const auto g = loss_backward(x, y, b.svm);
      auto loss_fn = [&] { return loss(x, y, b.svm); };
      compare_groups(entry, loss_fn,
                     {{"x", detail::span_of(x)},
                      {"weights", detail::span_of(b.svm.weights)},
                      {"bias", detail::span_of(b.svm.bias)}},
                     {cspan(g.x), cspan(g.weights), cspan(g.bias)}, h);
      break;
    }
    case GradLayer::chain:
    case GradLayer::chain_power: {
      ForwardOptions opt;
      opt.temporal_stride = problem.temporal_stride;
      opt.power_norm = layer == GradLayer::chain_power;
      opt.crops = problem.crops;
      const Vector y = one_vs_all_target(problem.label, b.svm.classes());
      auto loss = [&] {
        const auto fw = forward(problem.video, b, opt);
        return regularizer(b.svm) + hinge_term(fw.scores, y);
      };
      const auto fw = forward(problem.video, b, opt);
      ModelBundle grads = zeros_like(b);
      backward(hinge_term_backward(fw.scores, y), fw, b, grads);
      grads.svm.weights += b.svm.lambda() * b.svm.weights;
      // The input gradient is verified by the extractor check. At this depth
      // some pixel gradients are ~1e-7, below what differences of an O(1)
      // loss can resolve at h = 1e-5.
      std::vector<std::pair<std::string, std::span<double>>> values;
      std::vector<std::span<const double>> analytic;
      auto pg = parameter_groups(b);
      auto gg = parameter_groups(grads);
      for (std::size_t i = 0; i < pg.size(); ++i) {
        values.emplace_back(pg[i].name, pg[i].values);
        analytic.emplace_back(gg[i].values);
      }
      compare_groups(entry, loss, values, analytic, h);
      break;
    }
  }
  return entry;
}

inline std::vector<GradCheckEntry> grad_check_all(const GradCheckProblem& problem, double h = 1e-5) {
  std::vector<GradCheckEntry> out;
  for (auto l : all_grad_layers()) out.push_back(grad_check(problem, l, h));
  return out;
}

}  // namespace fvnet
