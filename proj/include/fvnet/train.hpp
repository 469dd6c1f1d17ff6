#pragma once

// Two-phase training: unsupervised layer-wise initialization (random
// extractor filters, PCA, EM, then an SVM on the resulting FVs) followed by
// end-to-end finetuning of every layer with SGD+momentum or AdaGrad.

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fvnet/bundle.hpp"
#include "fvnet/classifier.hpp"
#include "fvnet/dataset.hpp"
#include "fvnet/error.hpp"
#include "fvnet/extractor.hpp"
#include "fvnet/fisher.hpp"
#include "fvnet/gmm.hpp"
#include "fvnet/network.hpp"
#include "fvnet/optim.hpp"
#include "fvnet/projection.hpp"
#include "fvnet/rng.hpp"
#include "fvnet/st_pool.hpp"

namespace fvnet {

struct ArchitectureConfig {
  InputKind input = InputKind::frames;
  bool lcn = true;
  std::size_t filters = 4;  // d
  std::size_t kernel = 5;
  std::size_t conv_pool_window = 2;
  std::size_t conv_pool_stride = 2;
  double filter_std = 0.01;
  PoolConfig pool{2, 3, 3, 3, 15, 2};
};

struct InitConfig {
  ArchitectureConfig arch;
  std::size_t subvolumes_per_video = 20;
  std::size_t pca_samples_per_video = 5;
  std::size_t n_c = 8;
  std::size_t components = 8;  // K
  double C = 100.0;
  std::size_t temporal_stride = 15;
  std::size_t em_iterations = 100;
  double em_tolerance = 1e-6;
  SvmTrainOptions svm;
  std::uint64_t seed = 1;
};

inline void validate(const InitConfig& cfg) {
  if (cfg.subvolumes_per_video < 1 || cfg.pca_samples_per_video < 1) {
    throw ConfigError("subvolume counts must be positive");
  }
  if (cfg.pca_samples_per_video > cfg.subvolumes_per_video) {
    throw ConfigError("pca_samples_per_video cannot exceed subvolumes_per_video");
  }
  if (cfg.n_c < 1 || cfg.components < 1) throw ConfigError("n_c and K must be positive");
  if (!(cfg.C > 0.0)) throw ConfigError("C must be positive");
  validate(cfg.arch.pool);
}

/// Maps fed to the pooling layer for one prepared input.
inline Tensor4 feature_maps(const Tensor4& prepared, const ModelBundle& b) {
  return b.input == InputKind::frames ? extract(prepared, *b.extractor) : prepared;
}

/// Normalized full-grid FV of every prepared input.
inline std::vector<Vector> video_fvs(const std::vector<Tensor4>& prepared, const ModelBundle& b,
                                     std::size_t temporal_stride) {
  std::vector<Vector> out;
  out.reserve(prepared.size());
  for (const auto& input : prepared) {
    auto maps = feature_maps(input, b);
    std::vector<Tensor4> descriptors;
    for (auto s : window_starts(maps.dim(0), b.pool.frames, temporal_stride)) {
      descriptors.push_back(project(pool(frames(maps, s, b.pool.frames), b.pool), b.projection));
    }
    out.push_back(fv_encode(descriptors, b.gmm).values);
  }
  return out;
}

/// Unsupervised initialization followed by SVM training on the train FVs.
inline ModelBundle init_pipeline(const std::vector<VideoSample>& train, std::size_t classes, const InitConfig& cfg) {
  validate(cfg);
  if (train.empty()) throw ConfigError("init needs a nonempty training set");
  Rng rng(cfg.seed);
  const auto& arch = cfg.arch;

  ModelBundle b;
  b.input = arch.input;
  b.lcn = arch.lcn;
  b.pool = arch.pool;
  const std::size_t channels = train.front().video.dim(3);
  if (arch.input == InputKind::frames) {
    b.extractor = random_extractor(arch.filters, arch.kernel, arch.kernel, channels, arch.conv_pool_window,
                                   arch.conv_pool_stride, rng, arch.filter_std);
  }
  const std::size_t d = arch.input == InputKind::frames ? arch.filters : channels;
  const std::size_t D = b.pool.descriptor_dim(d);

  // Random spatio-temporal subvolumes, pooled into D-vectors.
  std::vector<Tensor4> prepared;
  prepared.reserve(train.size());
  RowMatrix all(static_cast<Eigen::Index>(train.size() * cfg.subvolumes_per_video), static_cast<Eigen::Index>(D));
  RowMatrix pca_rows(static_cast<Eigen::Index>(train.size() * cfg.pca_samples_per_video), static_cast<Eigen::Index>(D));
  Eigen::Index row = 0, pca_row = 0;
  for (const auto& sample : train) {
    prepared.push_back(prepare_input(sample.video, b));
    const auto maps = feature_maps(prepared.back(), b);
    if (maps.dim(0) < b.pool.frames) throw ShapeError("training video shorter than the window t");
    const auto [gh, gw] = pool_output_dims(maps.dim(1), maps.dim(2), b.pool);
    for (std::size_t i = 0; i < cfg.subvolumes_per_video; ++i) {
      const std::size_t start = rng.index(maps.dim(0) - b.pool.frames + 1);
      const std::size_t gy = rng.index(gh), gx = rng.index(gw);
      const Tensor4 block = crop(maps, {start, gy * b.pool.stride, gx * b.pool.stride, 0},
                                 {b.pool.frames, b.pool.window_h(), b.pool.window_w(), maps.dim(3)});
      const Tensor4 desc = pool(block, b.pool);
      for (std::size_t j = 0; j < D; ++j) all(row, static_cast<Eigen::Index>(j)) = desc.values()[j];
      if (i < cfg.pca_samples_per_video) pca_rows.row(pca_row++) = all.row(row);
      ++row;
    }
  }

  b.projection = pca_fit(pca_rows, cfg.n_c);
  RowMatrix reduced(all.rows(), static_cast<Eigen::Index>(cfg.n_c));
  for (Eigen::Index r = 0; r < all.rows(); ++r) {
    project_fiber({all.row(r).data(), D}, b.projection, {reduced.row(r).data(), cfg.n_c});
  }
  EmOptions em;
  em.components = cfg.components;
  em.max_iterations = cfg.em_iterations;
  em.tolerance = cfg.em_tolerance;
  em.seed = rng.next_u64();
  b.gmm = em_fit(reduced, em).params;

  b.svm = zero_svm(classes, fv_dim(cfg.components, cfg.n_c), cfg.C, train.size());
  const auto fvs = video_fvs(prepared, b, cfg.temporal_stride);
  std::vector<std::size_t> labels;
  for (const auto& s : train) labels.push_back(s.label);
  train_svm(b.svm, fvs, labels, cfg.svm);
  validate(b);
  return b;
}

enum class OptimizerKind { sgd_momentum, adagrad };

struct FinetuneConfig {
  OptimizerKind optimizer = OptimizerKind::adagrad;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double lr_decay = 0.95;  // multiplier applied after every epoch
  double dropout = 0.0;    // drop probability on the extractor output
  std::size_t epochs = 1;
  std::size_t spatial_stride = 0;  // delta_S during finetuning; 0 keeps the bundle's
  std::size_t temporal_stride = 15;
  std::uint64_t seed = 1;
};

inline void validate(const FinetuneConfig& cfg) {
  if (!(cfg.learning_rate >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(cfg.dropout >= 0.0 && cfg.dropout < 1.0)) throw ConfigError("dropout must be in [0, 1)");
  if (cfg.temporal_stride < 1) throw ConfigError("temporal stride must be >= 1");
}

struct EpochMetrics {
  std::size_t epoch = 0;
  std::string split;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct Evaluation {
  double loss = 0.0;  // mean per-video loss
  double accuracy = 0.0;
  std::vector<VideoClassification> results;
};

inline double video_loss(const Vector& averaged_scores, std::size_t label, const SvmParams& svm) {
  return regularizer(svm) + hinge_term(averaged_scores, one_vs_all_target(label, svm.classes()));
}

inline Evaluation evaluate(const ModelBundle& b, const std::vector<VideoSample>& videos, std::size_t temporal_stride,
                           const CropSpec& crops = {}) {
  Evaluation e;
  std::size_t correct = 0;
  for (const auto& v : videos) {
    auto r = classify_video(v.video, b, temporal_stride, crops);
    e.loss += video_loss(r.scores, v.label, b.svm);
    correct += r.predicted == v.label ? 1 : 0;
    e.results.push_back(std::move(r));
  }
  if (!videos.empty()) {
    e.loss /= static_cast<double>(videos.size());
    e.accuracy = static_cast<double>(correct) / static_cast<double>(videos.size());
  }
  return e;
}

namespace detail {

inline void require_finite(const VideoForward& fw, double loss, const std::string& where) {
  auto check = [&](bool ok, const char* layer) {
    if (!ok) throw NumericError("non-finite output in layer '" + std::string(layer) + "' (" + where + ")");
  };
  // ReLU maps NaN to zero, so the pre-activation is checked as well.
  check(fw.maps.all_finite() && fw.extractor_cache.preactivation.all_finite(), "extractor");
  for (const auto& t : fw.pooled) check(t.all_finite(), "st-pool");
  for (const auto& t : fw.projected) check(t.all_finite(), "projection");
  for (const auto& c : fw.fv_caches) check(c.stats.s0.allFinite() && c.stats.s1.allFinite() && c.stats.s2.allFinite(), "gmm");
  for (const auto& f : fw.fvs) check(f.values.allFinite(), "fisher");
  check(fw.scores.allFinite(), "classifier");
  check(std::isfinite(loss), "loss");
}

}  // namespace detail

/// End-to-end finetuning, one video per update. Emits a "train" row per epoch
/// (loss and accuracy of the training-mode forward passes) and, when `test`
/// is given, a "test" row per epoch plus an epoch-0 row before any update.
/// `on_epoch` is called after every epoch (e.g. to checkpoint).
inline std::vector<EpochMetrics> finetune(
    ModelBundle& b, const std::vector<VideoSample>& train, const FinetuneConfig& cfg,
    const std::vector<VideoSample>* test = nullptr,
    const std::function<void(std::size_t, const ModelBundle&)>& on_epoch = {}) {
  validate(cfg);
  validate(b);
  Rng rng(cfg.seed);
  std::optional<PoolConfig> pool;
  if (cfg.spatial_stride > 0) {
    pool = b.pool;
    pool->stride = cfg.spatial_stride;
  }

  std::vector<Tensor4> prepared;
  prepared.reserve(train.size());
  for (const auto& s : train) prepared.push_back(prepare_input(s.video, b));

  for (const auto& g : parameter_groups(b)) {
    auto& slot = b.optimizer_state[g.name];
    if (slot.size() != g.values.size()) slot.assign(g.values.size(), 0.0);
  }

  std::vector<EpochMetrics> metrics;
  if (test) {
    const auto e = evaluate(b, *test, cfg.temporal_stride);
    metrics.push_back({0, "test", e.loss, e.accuracy});
  }

  ForwardOptions opt;
  opt.temporal_stride = cfg.temporal_stride;
  opt.dropout = cfg.dropout;
  opt.training = true;
  opt.rng = &rng;

  std::vector<std::size_t> order(train.size());
  double lr = cfg.learning_rate;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (auto idx : order) {
      const auto& sample = train[idx];
      const auto fw = forward(prepared[idx], b, opt, pool);
      const Vector y = one_vs_all_target(sample.label, b.svm.classes());
      const double loss = regularizer(b.svm) + hinge_term(fw.scores, y);
      detail::require_finite(fw, loss, "epoch " + std::to_string(epoch) + ", video " + std::to_string(idx));
      loss_sum += loss;
      correct += fw.predicted == sample.label ? 1 : 0;
      if (lr == 0.0) continue;

      ModelBundle grads = zeros_like(b);
      backward(hinge_term_backward(fw.scores, y), fw, b, grads);
      grads.svm.weights += b.svm.lambda() * b.svm.weights;

      auto params = parameter_groups(b);
      auto gradients = parameter_groups(grads);
      for (std::size_t g = 0; g < params.size(); ++g) {
        auto& state = b.optimizer_state[params[g].name];
        if (cfg.optimizer == OptimizerKind::adagrad) {
          adagrad_step(params[g].values, gradients[g].values, state, lr);
        } else {
          sgd_momentum_step(params[g].values, gradients[g].values, state, lr, cfg.momentum);
        }
      }
      apply_variance_floor(b.gmm);
    }
    const double n = static_cast<double>(std::max<std::size_t>(train.size(), 1));
    metrics.push_back({epoch, "train", loss_sum / n, static_cast<double>(correct) / n});
    if (test) {
      const auto e = evaluate(b, *test, cfg.temporal_stride);
      metrics.push_back({epoch, "test", e.loss, e.accuracy});
    }
    if (on_epoch) on_epoch(epoch, b);
    lr *= cfg.lr_decay;
  }
  return metrics;
}

}  // namespace fvnet
