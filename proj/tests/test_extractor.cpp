#include <gtest/gtest.h>

#include "fvnet/extractor.hpp"
#include "oracles.hpp"

using namespace fvnet;

namespace {

Tensor4 random_tensor(const Dims4& d, std::uint64_t seed, double sd = 1.0) {
  return Tensor4(d, oracle::random_buf(element_count(d), seed, sd));
}

ExtractorParams params_from(const Tensor4& filters, std::vector<double> biases, std::size_t pw, std::size_t ps) {
  ExtractorParams p;
  p.filters = filters;
  p.biases = std::move(biases);
  p.pool_window = pw;
  p.pool_stride = ps;
  return p;
}

}  // namespace

TEST(Lcn, ConstantImageGivesZeros) {
  const Tensor4 t({1, 12, 12, 1}, 3.5);
  for (double v : lcn(t).values()) EXPECT_EQ(v, 0.0);
}

TEST(Lcn, MatchesSlidingWindowOracle) {
  const auto t = random_tensor({1, 16, 16, 1}, 1);
  const auto out = lcn(t);
  const auto ref = oracle::lcn_frame(t.storage(), 16, 16, 4, 1e-6);
  EXPECT_LT(oracle::max_abs_diff(out.storage(), ref), 1e-12);
}

TEST(Lcn, FramesAndChannelsAreIndependent) {
  const auto t = random_tensor({2, 10, 11, 2}, 2);
  const auto out = lcn(t);
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t c = 0; c < 2; ++c) {
      const auto single = crop(t, {f, 0, 0, c}, {1, 10, 11, 1});
      const auto ref = oracle::lcn_frame(single.storage(), 10, 11, 4, 1e-6);
      EXPECT_LT(oracle::max_abs_diff(crop(out, {f, 0, 0, c}, {1, 10, 11, 1}).storage(), ref), 1e-12);
    }
}

// On an affine image every interior pixel equals its own window mean.
TEST(Lcn, AffineInputHasZeroOutputOnInterior) {
  Tensor4 t({1, 20, 20, 1});
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 20; ++x) t(0, y, x, 0) = 0.3 * y - 0.7 * x + 2.0;
  const auto out = lcn(t);
  for (std::size_t y = 4; y < 16; ++y)
    for (std::size_t x = 4; x < 16; ++x) EXPECT_NEAR(out(0, y, x, 0), 0.0, 1e-9);
}

TEST(Lcn, LocalMeanOfOutputNearZeroOnRandomInput) {
  const auto t = random_tensor({1, 40, 40, 1}, 3);
  const auto out = lcn(t);
  // Each pixel is centred on its own window, so the interior average is small, not exact.
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t y = 4; y < 36; ++y)
    for (std::size_t x = 4; x < 36; ++x, ++n) s += out(0, y, x, 0);
  EXPECT_LT(std::abs(s / static_cast<double>(n)), 0.05);
}

TEST(Extract, IdentityFilterCopiesInput) {
  Tensor4 filt({1, 3, 3, 1});
  filt(0, 1, 1, 0) = 1.0;
  const auto p = params_from(filt, {0.0}, 1, 1);
  Tensor4 frames({2, 6, 7, 1});
  const auto r = oracle::random_buf(frames.size(), 4);
  for (std::size_t i = 0; i < r.size(); ++i) frames.values()[i] = std::abs(r[i]);  // ReLU-transparent
  const auto out = extract(frames, p);
  ASSERT_EQ(out.dims(), (Dims4{2, 4, 5, 1}));
  EXPECT_EQ(out, crop(frames, {0, 1, 1, 0}, {2, 4, 5, 1}));
}

TEST(Extract, ZeroFiltersGiveZeroMaps) {
  const auto p = params_from(Tensor4({3, 5, 5, 2}), {0, 0, 0}, 2, 2);
  const auto out = extract(random_tensor({2, 12, 12, 2}, 5), p);
  for (double v : out.values()) EXPECT_EQ(v, 0.0);
}

TEST(Extract, MatchesConvolutionOracle) {
  const auto filt = random_tensor({3, 3, 5, 2}, 6);
  const std::vector<double> bias{0.1, -0.2, 0.05};
  const auto p = params_from(filt, bias, 2, 2);
  const auto frames = random_tensor({3, 11, 13, 2}, 7);
  const auto out = extract(frames, p);
  for (std::size_t f = 0; f < 3; ++f) {
    std::size_t fh = 0, fw = 0;
    const auto frame = crop(frames, {f, 0, 0, 0}, {1, 11, 13, 2});
    const auto ref =
        oracle::conv_relu_pool(frame.storage(), 11, 13, 2, filt.storage(), bias, 3, 3, 5, 2, 2, &fh, &fw);
    ASSERT_EQ(out.dim(1), fh);
    ASSERT_EQ(out.dim(2), fw);
    EXPECT_LT(oracle::max_abs_diff(crop(out, {f, 0, 0, 0}, {1, fh, fw, 3}).storage(), ref), 1e-10);
  }
}

TEST(Extract, FrameSmallerThanFilterIsShapeError) {
  const auto p = params_from(Tensor4({1, 5, 5, 1}), {0.0}, 1, 1);
  EXPECT_THROW(extract(Tensor4({1, 4, 8, 1}), p), ShapeError);
}

TEST(Extract, EvenKernelRejected) {
  const auto p = params_from(Tensor4({1, 4, 3, 1}), {0.0}, 1, 1);
  EXPECT_THROW(extract(Tensor4({1, 8, 8, 1}), p), ConfigError);
}

TEST(Extract, RandomInitIsSeeded) {
  Rng a(9), b(9);
  EXPECT_EQ(random_extractor(4, 5, 5, 1, 2, 2, a).filters, random_extractor(4, 5, 5, 1, 2, 2, b).filters);
}

TEST(ExtractBackward, ZeroAndLinearInUpstream) {
  Rng rng(10);
  auto p = random_extractor(2, 3, 3, 1, 2, 2, rng, 0.5);
  const auto frames = random_tensor({2, 8, 8, 1}, 11);
  ExtractorCache cache;
  const auto out = extract(frames, p, &cache);
  const auto zero = extract_backward(Tensor4(out.dims()), cache, p);
  for (double v : zero.frames.values()) EXPECT_EQ(v, 0.0);
  for (double v : zero.filters.values()) EXPECT_EQ(v, 0.0);
  const auto up = random_tensor(out.dims(), 12);
  Tensor4 up2 = up;
  for (double& v : up2.values()) v *= 2.0;
  const auto g1 = extract_backward(up, cache, p), g2 = extract_backward(up2, cache, p);
  for (std::size_t i = 0; i < g1.frames.size(); ++i) EXPECT_EQ(g2.frames.values()[i], 2.0 * g1.frames.values()[i]);
  for (std::size_t i = 0; i < g1.filters.size(); ++i) EXPECT_EQ(g2.filters.values()[i], 2.0 * g1.filters.values()[i]);
}

TEST(ExtractBackward, UpstreamShapeMismatchRejected) {
  Rng rng(13);
  const auto p = random_extractor(2, 3, 3, 1, 2, 2, rng);
  ExtractorCache cache;
  extract(Tensor4({1, 8, 8, 1}), p, &cache);
  EXPECT_THROW(extract_backward(Tensor4({1, 3, 3, 1}), cache, p), ShapeError);
}

TEST(ExtractBackward, FiniteDifferences) {
  Rng rng(14);
  auto p = random_extractor(2, 3, 3, 1, 1, 1, rng, 0.5);
  p.biases = {0.05, -0.05};
  Tensor4 frames;
  ExtractorCache cache;
  // Keep every pre-activation away from the ReLU kink.
  for (std::uint64_t seed = 15;; ++seed) {
    frames = random_tensor({1, 8, 8, 1}, seed);
    extract(frames, p, &cache);
    bool ok = true;
    for (double v : cache.preactivation.values()) ok = ok && std::abs(v) > 1e-3;
    if (ok) break;
  }
  const auto out = extract(frames, p, &cache);
  const auto r = oracle::random_buf(out.size(), 99);
  const auto g = extract_backward(Tensor4(out.dims(), r), cache, p);
  auto probe = [&] {
    const auto o = extract(frames, p);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * o.values()[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < frames.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.frames.values()[i], oracle::central_diff(probe, frames.values()[i])));
  for (std::size_t i = 0; i < p.filters.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.filters.values()[i], oracle::central_diff(probe, p.filters.values()[i])));
  for (std::size_t i = 0; i < p.biases.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.biases[i], oracle::central_diff(probe, p.biases[i])));
  EXPECT_LT(worst, 1e-4);
}
