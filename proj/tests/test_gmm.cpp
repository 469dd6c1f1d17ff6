#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "fvnet/gmm.hpp"
#include "fixtures.hpp"

using namespace fvnet;
using fixtures::random_gmm;
using fixtures::to_oracle;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  std::size_t i = 0;
  for (double x : v) out(static_cast<Eigen::Index>(i++)) = x;
  return out;
}

RowMatrix gaussian_samples(std::size_t n, const Vector& mean, double sd, Rng& rng) {
  RowMatrix s(static_cast<Eigen::Index>(n), mean.size());
  for (Eigen::Index i = 0; i < s.rows(); ++i)
    for (Eigen::Index j = 0; j < s.cols(); ++j) s(i, j) = mean(j) + sd * rng.normal();
  return s;
}

}  // namespace

TEST(MixtureWeights, ClosedForms) {
  const auto w = mixture_weights(Vector::Zero(4));
  for (Eigen::Index k = 0; k < 4; ++k) EXPECT_DOUBLE_EQ(w(k), 0.25);
  const auto w2 = mixture_weights(vec({std::log(2.0), 0.0}));
  EXPECT_NEAR(w2(0), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(w2(1), 1.0 / 3.0, 1e-15);
}

TEST(MixtureWeights, SumToOneForAnyLogits) {
  for (std::uint64_t seed = 1; seed < 20; ++seed) {
    const auto a = oracle::random_buf(7, seed, 30.0);
    EXPECT_NEAR(mixture_weights(Eigen::Map<const Vector>(a.data(), 7)).sum(), 1.0, 1e-15);
  }
}

TEST(LogDensity, StandardNormalAtMean) {
  GmmParams p{Vector::Zero(1), RowMatrix::Zero(1, 1), RowMatrix::Zero(1, 1)};
  const double x = 0.0;
  EXPECT_NEAR(log_component_density({&x, 1}, 0, p), -0.91893853, 1e-8);
}

TEST(LogDensity, AtMeanOnlyNormalizerRemains) {
  const auto p = random_gmm(2, 5, 3);
  const Vector x = p.mean.row(1).transpose();
  const double expected = -0.5 * (5.0 * std::log(2.0 * std::numbers::pi) + p.log_var.row(1).sum());
  EXPECT_NEAR(log_component_density({x.data(), 5}, 1, p), expected, 1e-13);
}

TEST(LogDensity, MatchesDirectDensity) {
  const auto p = random_gmm(3, 4, 4);
  const auto x = oracle::random_buf(4, 5);
  for (std::size_t k = 0; k < 3; ++k) {
    long double dens = 1.0L;
    for (std::size_t i = 0; i < 4; ++i) {
      const long double v = std::exp(static_cast<long double>(p.log_var(k, i))), d = x[i] - p.mean(k, i);
      dens *= std::exp(-0.5L * d * d / v) / std::sqrt(2.0L * std::numbers::pi_v<long double> * v);
    }
    const double ref = static_cast<double>(std::log(dens));
    EXPECT_LT(std::abs(log_component_density(x, k, p) - ref) / std::abs(ref), 1e-12);
  }
}

TEST(Posteriors, SingleComponentIsOne) {
  const auto p = random_gmm(1, 3, 6);
  EXPECT_EQ(posteriors(Vector(Vector::Constant(3, 40.0)), p)(0), 1.0);
}

TEST(Posteriors, IdenticalComponentsSplitEvenly) {
  auto p = random_gmm(2, 3, 7);
  p.alpha.setZero();
  p.mean.row(1) = p.mean.row(0);
  p.log_var.row(1) = p.log_var.row(0);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto x = oracle::random_buf(3, 100 + s, 5.0);
    const auto g = posteriors(Vector(Eigen::Map<const Vector>(x.data(), 3)), p);
    EXPECT_NEAR(g(0), 0.5, 1e-15);
    EXPECT_NEAR(g(1), 0.5, 1e-15);
  }
}

TEST(Posteriors, MatchesDirectRatioOracle) {
  const auto p = random_gmm(3, 4, 8);
  const auto o = to_oracle(p);
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto x = oracle::random_buf(4, 200 + s);
    const auto g = posteriors(Vector(Eigen::Map<const Vector>(x.data(), 4)), p);
    worst = std::max(worst, oracle::max_abs_diff(g.data(), oracle::posteriors(x, o).data(), 3));
  }
  EXPECT_LT(worst, 1e-12);
}

TEST(Posteriors, TensorFormAppliesPerFiber) {
  const auto p = random_gmm(3, 2, 9);
  const Tensor4 x({1, 3, 4, 2}, oracle::random_buf(24, 10));
  const auto g = posteriors(x, p);
  ASSERT_EQ(g.dims(), (Dims4{1, 3, 4, 3}));
  for (std::size_t h = 0; h < 3; ++h)
    for (std::size_t w = 0; w < 4; ++w) {
      const auto f = x.fiber(0, h, w);
      const auto ref = posteriors(Vector(Eigen::Map<const Vector>(f.data(), 2)), p);
      for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(g(0, h, w, k), ref(static_cast<Eigen::Index>(k)));
    }
}

TEST(Posteriors, ExtremeInputsStayNormalized) {
  const auto p = random_gmm(4, 3, 11);
  for (double mag : {1e30, -1e30, 1e-30, 0.0}) {
    const Vector x = Vector::Constant(3, mag);
    const auto g = posteriors(x, p);
    EXPECT_NEAR(g.sum(), 1.0, 1e-12) << mag;
    EXPECT_GE(g.minCoeff(), 0.0);
    EXPECT_TRUE(g.allFinite());
  }
}

TEST(Posteriors, InvariantToLogitShift) {
  auto p = random_gmm(4, 3, 12);
  const auto x = oracle::random_buf(3, 13);
  const Vector xv = Eigen::Map<const Vector>(x.data(), 3);
  const auto a = posteriors(xv, p);
  p.alpha.array() += 17.3;
  EXPECT_LT((posteriors(xv, p) - a).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Em, SingleComponentIsClosedForm) {
  Rng rng(14);
  const auto s = gaussian_samples(300, vec({1.0, -2.0, 0.5}), 1.5, rng);
  EmOptions opt;
  opt.components = 1;
  const auto r = em_fit(s, opt);
  const Vector mean = s.colwise().mean().transpose();
  const Vector var = (s.rowwise() - mean.transpose()).array().square().colwise().mean().transpose();
  for (Eigen::Index i = 0; i < 3; ++i) {
    EXPECT_NEAR(r.params.mean(0, i), mean(i), 1e-10);
    EXPECT_NEAR(std::exp(r.params.log_var(0, i)), var(i), 1e-10);
  }
  EXPECT_EQ(r.params.alpha(0), 0.0);
}

TEST(Em, RecoversTwoSeparatedGaussians) {
  Rng rng(15);
  RowMatrix s(600, 2);
  s.topRows(300) = gaussian_samples(300, vec({-5.0, 3.0}), 1.0, rng);
  s.bottomRows(300) = gaussian_samples(300, vec({4.0, -2.0}), 1.0, rng);
  EmOptions opt;
  opt.components = 2;
  opt.seed = 3;
  const auto r = em_fit(s, opt);
  const Eigen::Index lo = r.params.mean(0, 0) < r.params.mean(1, 0) ? 0 : 1;
  EXPECT_NEAR(r.params.mean(lo, 0), -5.0, 0.1);
  EXPECT_NEAR(r.params.mean(lo, 1), 3.0, 0.1);
  EXPECT_NEAR(r.params.mean(1 - lo, 0), 4.0, 0.1);
  EXPECT_NEAR(r.params.mean(1 - lo, 1), -2.0, 0.1);
  EXPECT_NEAR(r.params.alpha.maxCoeff(), 0.0, 0.0);
}

TEST(Em, LogLikelihoodIsMonotone) {
  Rng rng(16);
  RowMatrix s(400, 3);
  s.topRows(200) = gaussian_samples(200, vec({0.0, 0.0, 0.0}), 1.0, rng);
  s.bottomRows(200) = gaussian_samples(200, vec({1.5, -1.0, 0.5}), 0.7, rng);
  EmOptions opt;
  opt.components = 4;
  opt.tolerance = 0.0;
  opt.max_iterations = 60;
  const auto r = em_fit(s, opt);
  ASSERT_GT(r.log_likelihood.size(), 2u);
  for (std::size_t i = 1; i < r.log_likelihood.size(); ++i) EXPECT_GE(r.log_likelihood[i], r.log_likelihood[i - 1] - 1e-9);
}

TEST(Em, VarianceFloorHolds) {
  RowMatrix s = RowMatrix::Zero(40, 2);
  s.col(0).setLinSpaced(40, 0.0, 1e-4);
  EmOptions opt;
  opt.components = 1;
  const auto r = em_fit(s, opt);
  EXPECT_GE(r.params.log_var.minCoeff(), std::log(kVarianceFloor) - 1e-15);
}

TEST(Em, TooFewSamplesRejected) {
  EmOptions opt;
  opt.components = 5;
  EXPECT_THROW(em_fit(RowMatrix::Zero(3, 2), opt), ConfigError);
}

TEST(PosteriorsBackward, ZeroUpstreamGivesZero) {
  const auto p = random_gmm(3, 4, 17);
  const Tensor4 x({1, 1, 5, 4}, oracle::random_buf(20, 18));
  const auto g = posteriors_backward(Tensor4({1, 1, 5, 3}), x, p);
  for (double v : g.x.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.alpha.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.mean.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.log_var.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PosteriorsBackward, SingleComponentHasNoGradient) {
  const auto p = random_gmm(1, 4, 19);
  const Tensor4 x({1, 1, 5, 4}, oracle::random_buf(20, 20));
  const auto g = posteriors_backward(Tensor4({1, 1, 5, 1}, oracle::random_buf(5, 21)), x, p);
  for (double v : g.x.values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(g.mean.cwiseAbs().maxCoeff(), 0.0);
  EXPECT_EQ(g.log_var.cwiseAbs().maxCoeff(), 0.0);
}

TEST(PosteriorsBackward, ShapeMismatchRejected) {
  const auto p = random_gmm(3, 4, 22);
  EXPECT_THROW(posteriors_backward(Tensor4({1, 1, 5, 2}), Tensor4({1, 1, 5, 4}), p), ShapeError);
}

TEST(PosteriorsBackward, FiniteDifferences) {
  auto p = random_gmm(3, 4, 23);
  Tensor4 x({1, 1, 5, 4}, oracle::random_buf(20, 24, 0.7));
  const auto r = oracle::random_buf(15, 25);
  const auto g = posteriors_backward(Tensor4({1, 1, 5, 3}, r), x, p);
  auto probe = [&] {
    const auto gamma = posteriors(x, p);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * gamma.values()[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.x.values()[i], oracle::central_diff(probe, x.values()[i])));
  for (Eigen::Index i = 0; i < 3; ++i)
    worst = std::max(worst, oracle::rel_err(g.alpha(i), oracle::central_diff(probe, p.alpha(i))));
  for (Eigen::Index i = 0; i < p.mean.size(); ++i) {
    worst = std::max(worst, oracle::rel_err(g.mean.data()[i], oracle::central_diff(probe, p.mean.data()[i])));
    worst = std::max(worst, oracle::rel_err(g.log_var.data()[i], oracle::central_diff(probe, p.log_var.data()[i])));
  }
  EXPECT_LT(worst, 1e-4);
}
