#pragma once

// Random parameter builders shared by the layer tests.

#include <cmath>

#include "fvnet/gmm.hpp"
#include "fvnet/tensor.hpp"
#include "oracles.hpp"

namespace fixtures {

inline fvnet::Tensor4 random_tensor(const fvnet::Dims4& d, std::uint64_t seed, double sd = 1.0) {
  return fvnet::Tensor4(d, oracle::random_buf(fvnet::element_count(d), seed, sd));
}

inline fvnet::Vector random_vector(std::size_t n, std::uint64_t seed, double sd = 1.0) {
  const auto b = oracle::random_buf(n, seed, sd);
  return Eigen::Map<const fvnet::Vector>(b.data(), static_cast<Eigen::Index>(n));
}

inline fvnet::RowMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed, double sd = 1.0) {
  const auto b = oracle::random_buf(rows * cols, seed, sd);
  return Eigen::Map<const fvnet::RowMatrix>(b.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline fvnet::GmmParams random_gmm(std::size_t K, std::size_t nc, std::uint64_t seed) {
  return {random_vector(K, seed, 0.5), random_matrix(K, nc, seed + 1), random_matrix(K, nc, seed + 2, 0.3)};
}

inline oracle::Gmm to_oracle(const fvnet::GmmParams& p) {
  oracle::Gmm g;
  g.K = p.components();
  g.nc = p.dim();
  const fvnet::Vector w = fvnet::mixture_weights(p.alpha);
  g.w.assign(w.data(), w.data() + w.size());
  g.mu.assign(p.mean.data(), p.mean.data() + p.mean.size());
  for (Eigen::Index i = 0; i < p.log_var.size(); ++i) g.var.push_back(std::exp(p.log_var.data()[i]));
  return g;
}

}  // namespace fixtures
