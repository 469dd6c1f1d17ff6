#pragma once

// m one-vs-all linear scorers trained with the squared hinge loss
//   lambda/2 ||W||^2 + sum_j max(0, 1 - y_j s_j)^2,  s = W x + b,
// with lambda = 2 / (N C) for a training set of N samples. The bias is not
// regularized.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "fvnet/error.hpp"
#include "fvnet/types.hpp"

namespace fvnet {

struct SvmParams {
  RowMatrix weights;  // m x d_FV
  Vector bias;        // m
  double C = 100.0;
  std::size_t train_size = 1;  // N

  std::size_t classes() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t input_dim() const { return static_cast<std::size_t>(weights.cols()); }
  double lambda() const { return 2.0 / (static_cast<double>(train_size) * C); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(weights.size() + bias.size()); }
};

inline SvmParams zero_svm(std::size_t m, std::size_t d_fv, double C, std::size_t train_size) {
  if (m < 2) throw ConfigError("classifier needs at least two classes");
  return {RowMatrix::Zero(static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(d_fv)),
          Vector::Zero(static_cast<Eigen::Index>(m)), C, std::max<std::size_t>(train_size, 1)};
}

inline Vector scores(const Vector& x, const SvmParams& p) {
  if (static_cast<std::size_t>(x.size()) != p.input_dim()) {
    throw ShapeError("classifier input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(p.input_dim()));
  }
  return p.weights * x + p.bias;
}

/// +1 at `label`, -1 elsewhere.
inline Vector one_vs_all_target(std::size_t label, std::size_t m) {
  if (label >= m) throw ConfigError("label " + std::to_string(label) + " out of range for " + std::to_string(m) + " classes");
  Vector y = Vector::Constant(static_cast<Eigen::Index>(m), -1.0);
  y(static_cast<Eigen::Index>(label)) = 1.0;
  return y;
}

inline void validate_target(const Vector& y, std::size_t m) {
  if (static_cast<std::size_t>(y.size()) != m) throw ConfigError("target has wrong length");
  std::size_t positives = 0;
  for (Eigen::Index j = 0; j < y.size(); ++j) {
    if (y(j) == 1.0) {
      ++positives;
    } else if (y(j) != -1.0) {
      throw ConfigError("target entries must be +1 or -1");
    }
  }
  if (positives != 1) throw ConfigError("target must have exactly one +1 entry");
}

/// Data term of the loss for a given score vector.
inline double hinge_term(const Vector& s, const Vector& y) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < s.size(); ++j) {
    const double h = std::max(0.0, 1.0 - y(j) * s(j));
    total += h * h;
  }
  return total;
}

inline Vector hinge_term_backward(const Vector& s, const Vector& y) {
  Vector g(s.size());
  for (Eigen::Index j = 0; j < s.size(); ++j) g(j) = -2.0 * std::max(0.0, 1.0 - y(j) * s(j)) * y(j);
  return g;
}

inline double regularizer(const SvmParams& p) { return 0.5 * p.lambda() * p.weights.squaredNorm(); }

inline double loss(const Vector& x, const Vector& y, const SvmParams& p) {
  validate_target(y, p.classes());
  return regularizer(p) + hinge_term(scores(x, p), y);
}

struct SvmGrads {
  Vector x;
  RowMatrix weights;
  Vector bias;
};

inline SvmGrads loss_backward(const Vector& x, const Vector& y, const SvmParams& p) {
  validate_target(y, p.classes());
  const Vector gs = hinge_term_backward(scores(x, p), y);
  return {p.weights.transpose() * gs, gs * x.transpose() + p.lambda() * p.weights, gs};
}

/// Argmax of the mean score vector; ties go to the lowest index.
inline std::size_t predict(std::span<const Vector> score_vectors) {
  if (score_vectors.empty()) throw ConfigError("predict needs at least one score vector");
  Vector mean = Vector::Zero(score_vectors.front().size());
  for (const auto& s : score_vectors) mean += s;
  mean /= static_cast<double>(score_vectors.size());
  std::size_t best = 0;
  for (Eigen::Index j = 1; j < mean.size(); ++j) {
    if (mean(j) > mean(static_cast<Eigen::Index>(best))) best = static_cast<std::size_t>(j);
  }
  return best;
}

inline std::size_t predict(const Vector& s) { return predict(std::span<const Vector>(&s, 1)); }

struct SvmTrainOptions {
  std::size_t epochs = 200;
  double learning_rate = 0.5;
  double momentum = 0.9;
  double plateau_tolerance = 1e-9;  // relative objective change that ends training early
};

/// Full-batch gradient descent with momentum on the mean per-sample loss over
/// fixed feature vectors. Returns the objective after each epoch.
inline std::vector<double> train_svm(SvmParams& p, const std::vector<Vector>& features,
                                     const std::vector<std::size_t>& labels, const SvmTrainOptions& opt) {
  if (features.size() != labels.size()) throw ShapeError("train_svm: features and labels differ in length");
  if (features.empty()) throw ConfigError("train_svm: no training samples");
  const auto m = p.classes();
  const double inv_n = 1.0 / static_cast<double>(features.size());
  RowMatrix vel_w = RowMatrix::Zero(p.weights.rows(), p.weights.cols());
  Vector vel_b = Vector::Zero(p.bias.size());
  std::vector<double> history;
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    RowMatrix gw = p.lambda() * p.weights;
    Vector gb = Vector::Zero(p.bias.size());
    double objective = regularizer(p);
    for (std::size_t i = 0; i < features.size(); ++i) {
      const Vector y = one_vs_all_target(labels[i], m);
      const Vector s = scores(features[i], p);
      objective += inv_n * hinge_term(s, y);
      const Vector gs = inv_n * hinge_term_backward(s, y);
      gw.noalias() += gs * features[i].transpose();
      gb += gs;
    }
    history.push_back(objective);
    vel_w = opt.momentum * vel_w - opt.learning_rate * gw;
    vel_b = opt.momentum * vel_b - opt.learning_rate * gb;
    p.weights += vel_w;
    p.bias += vel_b;
    if (history.size() > 1) {
      const double prev = history[history.size() - 2];
      if (std::abs(prev - objective) <= opt.plateau_tolerance * std::max(1.0, std::abs(prev))) break;
    }
  }
  return history;
}

}  // namespace fvnet
