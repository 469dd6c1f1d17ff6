#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "fvnet/projection.hpp"
#include "oracles.hpp"

using namespace fvnet;

namespace {

RowMatrix random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  const auto b = oracle::random_buf(rows * cols, seed);
  return Eigen::Map<const RowMatrix>(b.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tensor4 random_tensor(const Dims4& d, std::uint64_t seed) { return Tensor4(d, oracle::random_buf(element_count(d), seed)); }

}  // namespace

TEST(Pca, LineDataKeepsAllVariance) {
  RowMatrix s(50, 3);
  const Vector dir = Vector::Ones(3).normalized();
  for (int i = 0; i < 50; ++i) s.row(i) = (0.3 * i - 4.0) * dir.transpose() + Eigen::RowVector3d(1, 2, 3);
  // Rank-1 data: n_c = 1 works, and the projected variance is the total variance.
  const auto p = pca_fit(s, 1);
  const RowMatrix c = s.rowwise() - s.colwise().mean();
  const double total = c.squaredNorm() / 49.0;
  double proj = 0.0;
  for (int i = 0; i < 50; ++i) proj += std::pow(project(Vector(s.row(i).transpose()), p)(0), 2);
  EXPECT_NEAR(proj / 49.0, total, 1e-10);
}

TEST(Pca, RankDeficiencyReportsEffectiveRank) {
  RowMatrix s(50, 3);
  for (int i = 0; i < 50; ++i) s.row(i) = Eigen::RowVector3d(i, 2.0 * i, 0.5);
  try {
    pca_fit(s, 2);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("effective rank 1"), std::string::npos);
  }
}

TEST(Pca, TooFewSamplesOrComponents) {
  EXPECT_THROW(pca_fit(random_matrix(3, 5, 1), 3), ConfigError);
  EXPECT_THROW(pca_fit(random_matrix(30, 5, 1), 6), ConfigError);
}

TEST(Pca, MeanProjectsToZero) {
  const auto s = random_matrix(40, 6, 2);
  const auto p = pca_fit(s, 3);
  EXPECT_LT(project(p.mean, p).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Pca, RowsOrthonormalAtInit) {
  const auto p = pca_fit(random_matrix(100, 8, 3), 5);
  const RowMatrix g = p.axes * p.axes.transpose();
  EXPECT_LT((g - RowMatrix::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Pca, SignConventionLargestEntryPositive) {
  const auto p = pca_fit(random_matrix(100, 8, 4), 4);
  for (Eigen::Index r = 0; r < 4; ++r) {
    Eigen::Index arg = 0;
    p.axes.row(r).cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(p.axes(r, arg), 0.0);
  }
}

TEST(Pca, ProjectedCovarianceMatchesJacobiEigenvalues) {
  // Anisotropic data so the top eigenvalues are well separated.
  RowMatrix s = random_matrix(200, 8, 5);
  for (Eigen::Index j = 0; j < 8; ++j) s.col(j) *= 1.0 + 0.7 * static_cast<double>(j);
  s.col(1) += 0.5 * s.col(6);
  const auto p = pca_fit(s, 3);

  // Oracle: covariance by explicit sums, eigenvalues by Jacobi rotation.
  const std::size_t N = 200, D = 8;
  std::vector<double> mean(D, 0.0), cov(D * D, 0.0);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t j = 0; j < D; ++j) mean[j] += s(i, j) / N;
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t a = 0; a < D; ++a)
      for (std::size_t b = 0; b < D; ++b) cov[a * D + b] += (s(i, a) - mean[a]) * (s(i, b) - mean[b]) / (N - 1);
  auto [eig, vecs] = oracle::jacobi_eigen(cov, D);
  std::sort(eig.begin(), eig.end(), std::greater<>());

  RowMatrix y(200, 3);
  for (Eigen::Index i = 0; i < 200; ++i) y.row(i) = project(Vector(s.row(i).transpose()), p).transpose();
  const RowMatrix yc = y.rowwise() - y.colwise().mean();
  const RowMatrix ycov = yc.transpose() * yc / 199.0;
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) {
      const double expected = a == b ? eig[a] : 0.0;
      EXPECT_NEAR(ycov(a, b), expected, 1e-8 * std::max(1.0, eig[0]));
    }
}

TEST(Project, IdentityAxesAndZeroMeanIsIdentity) {
  Projection p{Vector::Zero(4), RowMatrix::Identity(4, 4)};
  const auto x = random_tensor({1, 2, 3, 4}, 6);
  EXPECT_EQ(project(x, p), x);
}

TEST(Project, MatchesMatrixMultiplyOracle) {
  Projection p{Vector(Eigen::Map<const Vector>(oracle::random_buf(6, 7).data(), 6)), random_matrix(3, 6, 8)};
  const auto x = random_tensor({2, 3, 2, 6}, 9);
  const auto y = project(x, p);
  double worst = 0.0;
  for (std::size_t f = 0; f < x.size() / 6; ++f)
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) s += (x.values()[f * 6 + i] - p.mean(i)) * p.axes(j, i);
      worst = std::max(worst, std::abs(s - y.values()[f * 3 + j]));
    }
  EXPECT_LT(worst, 1e-12);
}

TEST(Project, DimensionMismatchRejected) {
  Projection p{Vector::Zero(4), RowMatrix::Identity(2, 4)};
  EXPECT_THROW(project(Tensor4({1, 1, 1, 5}), p), ShapeError);
  EXPECT_THROW(project(Vector(Vector::Zero(3)), p), ShapeError);
}

TEST(ProjectBackward, ZeroUpstreamAndMeanGradientIdentity) {
  Projection p{Vector(Eigen::Map<const Vector>(oracle::random_buf(8, 10).data(), 8)), random_matrix(3, 8, 11)};
  const auto x = random_tensor({1, 5, 1, 8}, 12);
  const auto zero = project_backward(Tensor4({1, 5, 1, 3}), x, p);
  EXPECT_EQ(zero.mean.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(zero.axes.cwiseAbs().maxCoeff(), 0.0);

  const auto up = random_tensor({1, 5, 1, 3}, 13);
  const auto g = project_backward(up, x, p);
  Vector expected = Vector::Zero(8);
  for (std::size_t f = 0; f < 5; ++f)
    for (std::size_t j = 0; j < 3; ++j) expected -= up.values()[f * 3 + j] * p.axes.row(j).transpose();
  EXPECT_LT((g.mean - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ProjectBackward, FiniteDifferences) {
  Projection p{Vector(Eigen::Map<const Vector>(oracle::random_buf(8, 14).data(), 8)), random_matrix(3, 8, 15)};
  auto x = random_tensor({1, 5, 1, 8}, 16);
  const auto r = oracle::random_buf(15, 17);
  const auto g = project_backward(Tensor4({1, 5, 1, 3}, r), x, p);
  auto probe = [&] {
    const auto y = project(x, p);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * y.values()[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.x.values()[i], oracle::central_diff(probe, x.values()[i], 1e-3)));
  for (Eigen::Index i = 0; i < 8; ++i)
    worst = std::max(worst, oracle::rel_err(g.mean(i), oracle::central_diff(probe, p.mean(i), 1e-3)));
  for (Eigen::Index i = 0; i < p.axes.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.axes.data()[i], oracle::central_diff(probe, p.axes.data()[i], 1e-3)));
  EXPECT_LT(worst, 1e-6);
}
