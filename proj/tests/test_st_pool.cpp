#include <gtest/gtest.h>

#include "fvnet/rng.hpp"
#include "fvnet/st_pool.hpp"
#include "oracles.hpp"

using namespace fvnet;

namespace {

Tensor4 random_tensor(const Dims4& d, std::uint64_t seed) { return Tensor4(d, oracle::random_buf(element_count(d), seed)); }

}  // namespace

TEST(PoolDims, SingleAlignedWindow) {
  const PoolConfig c{2, 3, 7, 7, 15, 7};
  EXPECT_EQ(pool_output_dims(14, 14, c), (std::pair<std::size_t, std::size_t>{1, 1}));
}

TEST(PoolDims, ExactFitGivesOneForAnyStride) {
  for (std::size_t s = 1; s < 6; ++s) {
    const PoolConfig c{3, 1, 2, 2, 1, s};
    EXPECT_EQ(pool_output_dims(6, 6, c).first, 1u);
  }
}

TEST(PoolDims, MatchesCountingLoop) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    PoolConfig c{1 + rng.index(3), 1, 1 + rng.index(4), 1 + rng.index(4), 1, 1 + rng.index(5)};
    const std::size_t fh = c.window_h() + rng.index(20), fw = c.window_w() + rng.index(20);
    std::size_t nh = 0, nw = 0;
    for (std::size_t y = 0; y + c.window_h() <= fh; y += c.stride) ++nh;
    for (std::size_t x = 0; x + c.window_w() <= fw; x += c.stride) ++nw;
    EXPECT_EQ(pool_output_dims(fh, fw, c), (std::pair<std::size_t, std::size_t>{nh, nw}));
  }
}

TEST(PoolDims, WindowLargerThanMapIsShapeError) {
  EXPECT_THROW(pool_output_dims(13, 14, PoolConfig{2, 3, 7, 7, 15, 7}), ShapeError);
}

TEST(PoolConfig, IndivisibleWindowRejected) {
  EXPECT_THROW(validate(PoolConfig{2, 4, 7, 7, 15, 7}), ConfigError);
  EXPECT_THROW(pool(Tensor4({15, 14, 14, 1}), PoolConfig{2, 4, 7, 7, 15, 7}), ConfigError);
}

TEST(Pool, ConstantInputGivesConstantOutput) {
  const PoolConfig c{2, 3, 2, 3, 6, 1};
  const auto out = pool(Tensor4({6, 7, 9, 2}, -1.25), c);
  EXPECT_EQ(out.dim(3), c.descriptor_dim(2));
  for (double v : out.values()) EXPECT_DOUBLE_EQ(v, -1.25);
}

TEST(Pool, DegenerateCellsAreReshape) {
  const auto maps = random_tensor({1, 4, 5, 3}, 2);
  const auto out = pool(maps, PoolConfig{1, 1, 1, 1, 1, 1});
  EXPECT_EQ(out.dims(), (Dims4{1, 4, 5, 3}));
  EXPECT_EQ(out.storage(), maps.storage());
}

TEST(Pool, MatchesSixLoopOracle) {
  const auto maps = random_tensor({4, 14, 14, 3}, 3);
  const PoolConfig c{2, 2, 7, 7, 4, 7};
  const auto out = pool(maps, c);
  std::size_t gh = 0, gw = 0;
  const auto ref = oracle::st_pool(maps.storage(), 4, 14, 14, 3, 2, 2, 7, 7, &gh, &gw);
  EXPECT_EQ(out.dims(), (Dims4{1, gh, gw, c.descriptor_dim(3)}));
  EXPECT_LT(oracle::max_abs_diff(out.storage(), ref), 1e-12);
}

TEST(Pool, OverlappingGridMatchesOracle) {
  const auto maps = random_tensor({6, 11, 13, 2}, 4);
  const auto out = pool(maps, PoolConfig{2, 3, 3, 2, 6, 2});
  std::size_t gh = 0, gw = 0;
  // Oracle assumes square cells, so compare on a square-cell config too.
  const auto sq = pool(maps, PoolConfig{2, 3, 3, 3, 6, 2});
  const auto ref = oracle::st_pool(maps.storage(), 6, 11, 13, 2, 2, 3, 3, 2, &gh, &gw);
  EXPECT_EQ(sq.dim(1), gh);
  EXPECT_EQ(sq.dim(2), gw);
  EXPECT_LT(oracle::max_abs_diff(sq.storage(), ref), 1e-12);
  EXPECT_EQ(out.dim(2), (13 - 4) / 2 + 1);
}

TEST(Pool, CellMeansAverageToBlockMean) {
  const auto maps = random_tensor({6, 8, 8, 2}, 5);
  const PoolConfig c{2, 3, 4, 4, 6, 8};
  const auto out = pool(maps, c);
  for (std::size_t ch = 0; ch < 2; ++ch) {
    double cells = 0.0, block = 0.0;
    for (std::size_t cell = 0; cell < 12; ++cell) cells += out.values()[cell * 2 + ch];
    for (std::size_t f = 0; f < 6; ++f)
      for (std::size_t y = 0; y < 8; ++y)
        for (std::size_t x = 0; x < 8; ++x) block += maps(f, y, x, ch);
    EXPECT_NEAR(cells, 12.0 * block / (6.0 * 64.0), 1e-12);
  }
}

TEST(Pool, AlignedCropCommutes) {
  const auto maps = random_tensor({4, 16, 18, 2}, 6);
  const PoolConfig c{2, 2, 2, 2, 4, 2};
  const auto full = pool(maps, c);
  // Grid rows 1..3, cols 2..5 start at map offset (2, 4) and span (3 - 1)*2 + 4 rows.
  const auto sub = crop(maps, {0, 2, 4, 0}, {4, 8, 10, 2});
  EXPECT_EQ(pool(sub, c), crop(full, {0, 1, 2, 0}, {1, 3, 4, full.dim(3)}));
}

TEST(PoolBackward, ZeroUpstreamGivesZero) {
  const PoolConfig c{2, 2, 2, 2, 4, 1};
  const auto g = pool_backward(Tensor4({1, 3, 3, c.descriptor_dim(2)}), c, {4, 6, 6, 2});
  for (double v : g.values()) EXPECT_EQ(v, 0.0);
}

TEST(PoolBackward, NonOverlappingWindowsSpreadEvenly) {
  const PoolConfig c{2, 3, 2, 2, 6, 4};
  const auto up = random_tensor({1, 2, 2, c.descriptor_dim(1)}, 7);
  const auto g = pool_backward(up, c, {6, 8, 8, 1});
  for (std::size_t f = 0; f < 6; ++f)
    for (std::size_t y = 0; y < 8; ++y)
      for (std::size_t x = 0; x < 8; ++x) {
        const std::size_t cell = ((f / 2) * 2 + (y % 4) / 2) * 2 + (x % 4) / 2;
        EXPECT_DOUBLE_EQ(g(f, y, x, 0), up(0, y / 4, x / 4, cell) / 8.0);
      }
}

TEST(PoolBackward, ShapeMismatchRejected) {
  const PoolConfig c{2, 2, 2, 2, 4, 1};
  EXPECT_THROW(pool_backward(Tensor4({1, 2, 3, c.descriptor_dim(2)}), c, {4, 6, 6, 2}), ShapeError);
}

TEST(PoolBackward, FiniteDifferences) {
  auto maps = random_tensor({4, 7, 7, 2}, 8);
  const PoolConfig c{2, 2, 2, 2, 4, 1};
  const auto out = pool(maps, c);
  const auto r = oracle::random_buf(out.size(), 9);
  const auto g = pool_backward(Tensor4(out.dims(), r), c, maps.dims());
  auto probe = [&] {
    const auto o = pool(maps, c);
    double s = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) s += r[i] * o.values()[i];
    return s;
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < maps.size(); ++i)
    worst = std::max(worst, oracle::rel_err(g.values()[i], oracle::central_diff(probe, maps.values()[i], 1e-3)));
  EXPECT_LT(worst, 1e-6);
}
