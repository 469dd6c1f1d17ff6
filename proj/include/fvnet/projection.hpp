#pragma once

// Trainable affine dimensionality reduction x' = (x - mean) P^T, where P is
// n_c x D. Initialized by PCA; P is unconstrained once finetuning starts.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include <Eigen/Eigenvalues>

#include "fvnet/error.hpp"
#include "fvnet/tensor.hpp"
#include "fvnet/types.hpp"

namespace fvnet {

struct Projection {
  Vector mean;     // D
  RowMatrix axes;  // n_c x D, one projection axis per row

  std::size_t input_dim() const { return static_cast<std::size_t>(axes.cols()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(axes.rows()); }
  std::size_t parameter_count() const { return static_cast<std::size_t>(mean.size() + axes.size()); }
};

/// PCA on the rows of `samples` (N x D). Covariance uses 1/(N-1); the axes are
/// the top-n_c eigenvectors in descending eigenvalue order, each signed so its
/// largest-magnitude entry is positive. No whitening.
inline Projection pca_fit(const RowMatrix& samples, std::size_t n_c) {
  const auto N = static_cast<std::size_t>(samples.rows());
  const auto D = static_cast<std::size_t>(samples.cols());
  if (n_c < 1 || n_c > D) {
    throw ConfigError("PCA needs 1 <= n_c <= D (n_c=" + std::to_string(n_c) + ", D=" + std::to_string(D) + ")");
  }
  if (N <= n_c) {
    throw ConfigError("PCA needs more samples than components (" + std::to_string(N) + " <= " +
                      std::to_string(n_c) + ")");
  }
  Projection p;
  p.mean = samples.colwise().mean().transpose();
  const RowMatrix centered = samples.rowwise() - p.mean.transpose();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(N - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw NumericError("PCA eigendecomposition failed");
  const Vector& values = eig.eigenvalues();  // ascending
  const double top = std::max(values(values.size() - 1), 0.0);
  const double cutoff = top * static_cast<double>(D) * 1e-12;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) > cutoff && values(i) > 0.0) ++rank;
  }
  if (rank < n_c) {
    throw NumericError("PCA input has effective rank " + std::to_string(rank) + " < n_c=" + std::to_string(n_c));
  }

  p.axes.resize(static_cast<Eigen::Index>(n_c), static_cast<Eigen::Index>(D));
  for (std::size_t r = 0; r < n_c; ++r) {
    Vector v = eig.eigenvectors().col(static_cast<Eigen::Index>(D - 1 - r));
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    p.axes.row(static_cast<Eigen::Index>(r)) = v.transpose();
  }
  return p;
}

inline void project_fiber(std::span<const double> x, const Projection& p, std::span<double> out) {
  const auto D = p.input_dim(), nc = p.output_dim();
  for (std::size_t j = 0; j < nc; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < D; ++i) acc += (x[i] - p.mean(i)) * p.axes(j, i);
    out[j] = acc;
  }
}

inline Vector project(const Vector& x, const Projection& p) {
  if (static_cast<std::size_t>(x.size()) != p.input_dim()) {
    throw ShapeError("projection input has " + std::to_string(x.size()) + " entries, expected " +
                     std::to_string(p.input_dim()));
  }
  Vector out(p.axes.rows());
  project_fiber({x.data(), static_cast<std::size_t>(x.size())}, p, {out.data(), static_cast<std::size_t>(out.size())});
  return out;
}

/// Projects every channel fiber: (n, h, w, D) -> (n, h, w, n_c).
inline Tensor4 project(const Tensor4& x, const Projection& p) {
  const auto [n, h, w, D] = x.dims();
  if (D != p.input_dim()) {
    throw ShapeError("projection input fibers have " + std::to_string(D) + " entries, expected " +
                     std::to_string(p.input_dim()));
  }
  Tensor4 out({n, h, w, p.output_dim()});
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < h; ++b)
      for (std::size_t c = 0; c < w; ++c) project_fiber(x.fiber(a, b, c), p, out.fiber(a, b, c));
  return out;
}

struct ProjectionGrads {
  Tensor4 x;
  Vector mean;
  RowMatrix axes;
};

inline ProjectionGrads project_backward(const Tensor4& upstream, const Tensor4& x, const Projection& p) {
  const auto [n, h, w, D] = x.dims();
  if (D != p.input_dim() || upstream.dims() != Dims4{n, h, w, p.output_dim()}) {
    throw ShapeError("projection backward: upstream dims " + to_string(upstream.dims()) + " do not match input " +
                     to_string(x.dims()));
  }
  const auto nc = p.output_dim();
  ProjectionGrads g{Tensor4(x.dims()), Vector::Zero(p.mean.size()), RowMatrix::Zero(p.axes.rows(), p.axes.cols())};
  for (std::size_t a = 0; a < n; ++a)
    for (std::size_t b = 0; b < h; ++b)
      for (std::size_t c = 0; c < w; ++c) {
        auto up = upstream.fiber(a, b, c);
        auto in = x.fiber(a, b, c);
        auto gx = g.x.fiber(a, b, c);
        for (std::size_t j = 0; j < nc; ++j) {
          if (up[j] == 0.0) continue;
          for (std::size_t i = 0; i < D; ++i) {
            gx[i] += up[j] * p.axes(j, i);
            g.axes(j, i) += up[j] * (in[i] - p.mean(i));
          }
        }
        for (std::size_t i = 0; i < D; ++i) g.mean(i) -= gx[i];
      }
  return g;
}

}  // namespace fvnet
