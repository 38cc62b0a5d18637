#include <gtest/gtest.h>

#include "hfit/errors.hpp"
#include "hfit/layout.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace hfit;
using hfit::testing::normal;
using hfit::testing::uniform;

TEST(GridTokens, SingleCellGridIsOneRow) {
  auto g = normal({1, 5, 1, 1}, 1);
  auto t = grid_to_tokens(g);
  ASSERT_EQ(t.sizes(), (std::vector<int64_t>{1, 1, 5}));
  EXPECT_TRUE(torch::equal(t.view(-1), g.view(-1)));
}

TEST(GridTokens, RowMajorOrder) {
  auto g = torch::tensor({1.0, 2.0, 3.0, 4.0}).view({1, 1, 2, 2});  // [[a,b],[c,d]]
  auto t = grid_to_tokens(g);
  EXPECT_TRUE(torch::equal(t.view(-1), torch::tensor({1.0, 2.0, 3.0, 4.0})));
  EXPECT_TRUE(torch::equal(tokens_to_grid(t, 2, 2), g));
}

TEST(GridTokens, RoundTrips) {
  auto a = normal({2, 8, 4, 6}, 2);
  EXPECT_TRUE(torch::equal(tokens_to_grid(grid_to_tokens(a), 4, 6), a));
  auto b = normal({1, 4, 3, 5}, 3);
  EXPECT_TRUE(torch::equal(tokens_to_grid(grid_to_tokens(b), 3, 5), b));
}

TEST(GridTokens, WrongTokenCountIsShapeError) {
  EXPECT_THROW(tokens_to_grid(torch::zeros({1, 5, 3}), 2, 2), ShapeError);
  EXPECT_THROW(grid_to_tokens(torch::zeros({5, 3})), ShapeError);
}

TEST(PyramidLayout, TokenCounts) {
  EXPECT_EQ(pyramid_token_count(448, 448), 4116);
  EXPECT_EQ(pyramid_token_count(64, 64), 84);
  auto l = pyramid_layout(64, 64);
  EXPECT_EQ(l[0].token_offset, 0);
  EXPECT_EQ(l[1].token_offset, 64);
  EXPECT_EQ(l[2].token_offset, 80);
  EXPECT_EQ(l[0].grid_h, 8);
  EXPECT_EQ(l[1].grid_h, 4);
  EXPECT_EQ(l[2].grid_h, 2);
  auto big = pyramid_layout(448, 448);
  EXPECT_EQ(big[0].num_tokens(), 3136);
  EXPECT_EQ(big[1].num_tokens(), 784);
  EXPECT_EQ(big[2].num_tokens(), 196);
}

TEST(PyramidLayout, FormulaHoldsForManySizes) {
  for (int64_t h = 32; h <= 256; h += 32) {
    for (int64_t w = 32; w <= 256; w += 32) {
      auto l = pyramid_layout(h, w);
      const int64_t total = l[2].token_offset + l[2].num_tokens();
      EXPECT_EQ(total * 1024, h * w * 21);
      EXPECT_EQ(total, pyramid_token_count(h, w));
    }
  }
}

TEST(PyramidLayout, RejectsSizesNotDivisibleBy32) {
  EXPECT_THROW(pyramid_layout(48, 64), ShapeError);
  EXPECT_THROW(check_input_size(0, 32), ShapeError);
}

TEST(FlattenConcat, MixedSourceSizesRejected) {
  std::array<torch::Tensor, 3> g = {torch::zeros({1, 2, 8, 8}), torch::zeros({1, 2, 4, 4}),
                                    torch::zeros({1, 2, 3, 3})};  // 1/32 of 96x96
  EXPECT_THROW(flatten_concat(g), ShapeError);
}

TEST(FlattenConcat, SplitInvertsConcat) {
  for (int64_t side : {32, 64, 96}) {
    std::array<torch::Tensor, 3> g = {normal({2, 3, side / 8, side / 8}, 1),
                                      normal({2, 3, side / 16, side / 16}, 2),
                                      normal({2, 3, side / 32, side / 32}, 3)};
    auto p = flatten_concat(g);
    EXPECT_EQ(p.total_tokens(), pyramid_token_count(side, side));
    auto back = split_levels(p);
    for (int t = 0; t < 3; ++t) EXPECT_TRUE(torch::equal(back[t], g[t]));
    auto again = flatten_concat(back);
    EXPECT_TRUE(torch::equal(again.tokens, p.tokens));
    EXPECT_EQ(again.levels, p.levels);
  }
}

TEST(FlattenConcat, ConstantPyramidGivesConstantGrids) {
  TokenPyramid p{torch::full({1, 84, 1}, 0.25), pyramid_layout(64, 64)};
  auto g = split_levels(p);
  EXPECT_EQ(g[0].sizes(), (std::vector<int64_t>{1, 1, 8, 8}));
  EXPECT_EQ(g[1].sizes(), (std::vector<int64_t>{1, 1, 4, 4}));
  EXPECT_EQ(g[2].sizes(), (std::vector<int64_t>{1, 1, 2, 2}));
  for (const auto& grid : g) EXPECT_TRUE(torch::all(grid == 0.25).item<bool>());
}

TEST(Resample, ConstantStaysConstant) {
  auto m = torch::full({1, 1, 5, 7}, 0.7, torch::kDouble);
  for (auto [h, w] : std::vector<std::pair<int64_t, int64_t>>{{1, 1}, {3, 9}, {16, 16}}) {
    auto r = resample(m, h, w);
    EXPECT_LE(torch::max(torch::abs(r - 0.7)).item<double>(), 1e-15);
  }
}

TEST(Resample, CheckerboardToOnePixel) {
  auto m = torch::tensor({0.0, 1.0, 1.0, 0.0}, torch::kDouble).view({1, 1, 2, 2});
  EXPECT_NEAR(resample(m, 1, 1).item<double>(), 0.5, 1e-12);
}

TEST(Resample, IdentityTargetReturnsInput) {
  auto m = normal({2, 3, 4, 5}, 9);
  EXPECT_TRUE(torch::equal(resample(m, 4, 5), m));
}

TEST(Resample, MatchesScalarReference) {
  std::mt19937 rng(5);
  std::uniform_int_distribution<int64_t> side(1, 12);
  for (int trial = 0; trial < 40; ++trial) {
    const int64_t h = side(rng), w = side(rng), oh = side(rng), ow = side(rng);
    auto m = uniform({1, 1, h, w}, 100 + trial, torch::kDouble);
    oracle::Plane in{h, w, std::vector<double>(m.data_ptr<double>(), m.data_ptr<double>() + h * w)};
    auto want = oracle::bilinear(in, oh, ow);
    auto got = resample(m, oh, ow).contiguous();
    for (int64_t i = 0; i < oh * ow; ++i) {
      EXPECT_NEAR(got.data_ptr<double>()[i], want.v[static_cast<size_t>(i)], 1e-12)
          << h << "x" << w << " -> " << oh << "x" << ow << " at " << i;
    }
  }
}

TEST(Resample, BilinearStaysInValueRange) {
  for (int trial = 0; trial < 20; ++trial) {
    auto m = normal({1, 2, 6, 6}, 200 + trial);
    auto r = resample(m, 13, 5);
    for (int64_t c = 0; c < 2; ++c) {
      EXPECT_GE(r[0][c].min().item<float>(), m[0][c].min().item<float>());
      EXPECT_LE(r[0][c].max().item<float>(), m[0][c].max().item<float>());
    }
  }
}
