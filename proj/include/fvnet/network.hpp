#pragma once

// Whole-network forward and backward passes over one video, and video
// classification.
//
// The network slides along time: windows start at 0, delta_T, 2 delta_T, ...
// while start + t <= L (trailing frames that do not fill a window are
// dropped). Each window is pooled and projected; for every crop the FV
// statistics of all windows are merged, then normalized and scored. Crop
// scores are averaged and the argmax is the prediction.

#include <optional>
#include <string>
#include <vector>

#include "fvnet/bundle.hpp"
#include "fvnet/classifier.hpp"
#include "fvnet/error.hpp"
#include "fvnet/extractor.hpp"
#include "fvnet/fisher.hpp"
#include "fvnet/optim.hpp"
#include "fvnet/projection.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/st_pool.hpp"

namespace fvnet {

/// Crops in descriptor-grid coordinates. Unless `include_full` is false the
/// whole grid is used as a crop as well; it is not duplicated if listed.
struct CropSpec {
  std::vector<Region> regions;
  bool include_full = true;
};

struct ForwardOptions {
  std::size_t temporal_stride = 15;  // delta_T
  CropSpec crops;
  bool power_norm = true;
  double dropout = 0.0;  // drop probability on the extractor output
  bool training = false;
  Rng* rng = nullptr;    // required when dropping
};

/// Everything the backward pass needs from one forward pass.
struct VideoForward {
  Tensor4 input;  // LCN-normalized frames or precomputed feature maps
  ExtractorCache extractor_cache;
  Tensor4 maps;          // extractor output (or the feature maps themselves)
  Tensor4 dropout_mask;  // empty when dropout was not applied
  PoolConfig pool;
  std::vector<std::size_t> window_starts;
  std::vector<Tensor4> pooled;     // per window, (1, F_h', F_w', D)
  std::vector<Tensor4> projected;  // per window, (1, F_h', F_w', n_c)
  std::vector<Region> crops;
  std::vector<FvCache> fv_caches;  // per crop
  std::vector<FisherVector> fvs;   // per crop, normalized
  std::vector<Vector> crop_scores;
  Vector scores;  // averaged over crops
  std::size_t predicted = 0;
};

/// Applies the bundle's preprocessing (LCN of raw frames) to a video.
inline Tensor4 prepare_input(const Tensor4& video, const ModelBundle& b) {
  if (b.input == InputKind::frames && b.lcn) return lcn(video);
  return video;
}

inline std::vector<std::size_t> window_starts(std::size_t length, std::size_t t, std::size_t stride) {
  if (stride < 1) throw ConfigError("temporal stride must be >= 1");
  if (length < t) {
    throw ShapeError("video has " + std::to_string(length) + " frames, shorter than the window t=" + std::to_string(t));
  }
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + t <= length; s += stride) starts.push_back(s);
  return starts;
}

namespace detail {

inline std::vector<Region> resolve_crops(const CropSpec& spec, std::size_t gh, std::size_t gw) {
  const Region full{0, 0, gh, gw};
  std::vector<Region> out;
  if (spec.include_full) out.push_back(full);
  for (const auto& r : spec.regions) {
    if (r.h0 > gh || r.h > gh - r.h0 || r.w0 > gw || r.w > gw - r.w0) {
      throw BoundsError("crop region exceeds the " + std::to_string(gh) + "x" + std::to_string(gw) + " descriptor grid");
    }
    if (spec.include_full && r == full) continue;
    out.push_back(r);
  }
  if (out.empty()) throw ConfigError("crop spec selects no regions");
  return out;
}

}  // namespace detail

/// Forward pass over an already prepared input (see prepare_input).
/// `pool_override` replaces the bundle's pooling configuration when given
/// (e.g. a coarser spatial stride during finetuning).
inline VideoForward forward(const Tensor4& input, const ModelBundle& b, const ForwardOptions& opt,
                            const std::optional<PoolConfig>& pool_override = std::nullopt) {
  VideoForward fw;
  fw.pool = pool_override.value_or(b.pool);
  fw.input = input;
  if (b.input == InputKind::frames) {
    fw.maps = extract(input, *b.extractor, &fw.extractor_cache);
  } else {
    fw.maps = input;
  }
  Tensor4 maps = fw.maps;
  if (opt.training && opt.dropout > 0.0) {
    if (!opt.rng) throw ConfigError("dropout requires a random generator");
    auto d = dropout_forward(fw.maps, opt.dropout, *opt.rng, true);
    maps = std::move(d.output);
    fw.dropout_mask = std::move(d.mask);
  }

  fw.window_starts = window_starts(maps.dim(0), fw.pool.frames, opt.temporal_stride);
  for (auto s : fw.window_starts) {
    fw.pooled.push_back(fvnet::pool(frames(maps, s, fw.pool.frames), fw.pool));
    fw.projected.push_back(project(fw.pooled.back(), b.projection));
  }
  const auto& grid = fw.projected.front().dims();
  fw.crops = detail::resolve_crops(opt.crops, grid[1], grid[2]);
  fw.scores = Vector::Zero(static_cast<Eigen::Index>(b.svm.classes()));
  for (const auto& r : fw.crops) {
    FvCache cache;
    fw.fvs.push_back(fv_encode(fw.projected, b.gmm, r, opt.power_norm, &cache));
    fw.fv_caches.push_back(std::move(cache));
    fw.crop_scores.push_back(scores(fw.fvs.back().values, b.svm));
    fw.scores += fw.crop_scores.back();
  }
  fw.scores /= static_cast<double>(fw.crops.size());
  fw.predicted = predict(fw.crop_scores);
  return fw;
}

/// Backpropagates dL/d(averaged scores) to every trainable parameter of the
/// bundle (accumulated into `grads`, shaped like the bundle) and returns the
/// gradient wrt the prepared input. The regularizer is not included here.
inline Tensor4 backward(const Vector& score_grad, const VideoForward& fw, const ModelBundle& b, ModelBundle& grads,
                        bool input_grad = false) {
  const double inv_crops = 1.0 / static_cast<double>(fw.crops.size());
  std::vector<Tensor4> g_projected;
  for (const auto& p : fw.projected) g_projected.emplace_back(p.dims());

  for (std::size_t c = 0; c < fw.crops.size(); ++c) {
    const Vector gs = score_grad * inv_crops;
    grads.svm.weights.noalias() += gs * fw.fvs[c].values.transpose();
    grads.svm.bias += gs;
    const Vector g_fv = b.svm.weights.transpose() * gs;
    auto g = fv_backward(g_fv, fw.fv_caches[c], b.gmm);
    grads.gmm.alpha += g.gmm.alpha;
    grads.gmm.mean += g.gmm.mean;
    grads.gmm.log_var += g.gmm.log_var;
    for (std::size_t w = 0; w < g_projected.size(); ++w) {
      auto dst = g_projected[w].values();
      auto src = g.descriptors[w].values();
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    }
  }

  Tensor4 g_maps(fw.maps.dims());
  for (std::size_t w = 0; w < fw.window_starts.size(); ++w) {
    auto gp = project_backward(g_projected[w], fw.pooled[w], b.projection);
    grads.projection.mean += gp.mean;
    grads.projection.axes += gp.axes;
    const Dims4 window_dims{fw.pool.frames, fw.maps.dim(1), fw.maps.dim(2), fw.maps.dim(3)};
    auto gm = pool_backward(gp.x, fw.pool, window_dims);
    const std::size_t s = fw.window_starts[w];
    for (std::size_t f = 0; f < fw.pool.frames; ++f)
      for (std::size_t y = 0; y < window_dims[1]; ++y)
        for (std::size_t x = 0; x < window_dims[2]; ++x) {
          auto src = gm.fiber(f, y, x);
          auto dst = g_maps.fiber(s + f, y, x);
          for (std::size_t ch = 0; ch < src.size(); ++ch) dst[ch] += src[ch];
        }
  }
  if (!fw.dropout_mask.empty()) g_maps = dropout_backward(g_maps, fw.dropout_mask);

  if (b.input == InputKind::features) return g_maps;
  auto ge = extract_backward(g_maps, fw.extractor_cache, *b.extractor, input_grad);
  auto dst = grads.extractor->filters.values();
  auto src = ge.filters.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  for (std::size_t i = 0; i < ge.biases.size(); ++i) grads.extractor->biases[i] += ge.biases[i];
  return ge.frames;
}

struct VideoClassification {
  std::size_t predicted = 0;
  std::vector<FisherVector> fvs;  // per crop, normalized
  Vector scores;                  // averaged over crops
};

inline VideoClassification classify_video(const Tensor4& video, const ModelBundle& b, std::size_t temporal_stride,
                                          const CropSpec& crops = {}) {
  ForwardOptions opt;
  opt.temporal_stride = temporal_stride;
  opt.crops = crops;
  auto fw = forward(prepare_input(video, b), b, opt);
  return {fw.predicted, std::move(fw.fvs), std::move(fw.scores)};
}

}  // namespace fvnet
