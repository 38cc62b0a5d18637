#pragma once

// Token/grid layout conventions shared by every module.
//
// Grids are NCHW tensors (B, D, h, w). Token matrices are (B, h*w, D) with
// row-major token order: token r*w + c is grid cell (r, c). A token pyramid
// concatenates the stride-8, stride-16 and stride-32 levels in that order.

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <string>

namespace hfit {

inline constexpr int kNumLevels = 3;
inline constexpr std::array<int64_t, kNumLevels> kLevelStrides = {8, 16, 32};
inline constexpr int64_t kPatchSize = 16;

struct LevelSpec {
  int64_t stride = 0;
  int64_t grid_h = 0;
  int64_t grid_w = 0;
  int64_t token_offset = 0;

  int64_t num_tokens() const { return grid_h * grid_w; }
  bool operator==(const LevelSpec&) const = default;
};

using LevelLayout = std::array<LevelSpec, kNumLevels>;

// Level layout of the pyramid built from an H x W raster (both multiples of 32).
LevelLayout pyramid_layout(int64_t height, int64_t width);

// H*W*(1/64 + 1/256 + 1/1024) = H*W*21/1024.
int64_t pyramid_token_count(int64_t height, int64_t width);

// Throws ShapeError unless both sides are positive multiples of 32.
void check_input_size(int64_t height, int64_t width);

struct TokenPyramid {
  torch::Tensor tokens;  // (B, T_total, D)
  LevelLayout levels{};

  int64_t total_tokens() const;
  int64_t dim() const { return tokens.size(2); }
  // Same layout, different token values.
  TokenPyramid with_tokens(torch::Tensor new_tokens) const;
};

struct ViTTokens {
  torch::Tensor tokens;  // (B, grid_h*grid_w, D)
  int64_t grid_h = 0;
  int64_t grid_w = 0;

  int64_t dim() const { return tokens.size(2); }
  ViTTokens with_tokens(torch::Tensor new_tokens) const;
};

enum class ResampleMode { kBilinear, kNearest };

ResampleMode parse_resample_mode(const std::string& name);
std::string to_string(ResampleMode mode);

// (B, D, h, w) -> (B, h*w, D)
torch::Tensor grid_to_tokens(const torch::Tensor& grid);

// (B, h*w, D) -> (B, D, h, w); ShapeError if the token count is not h*w.
torch::Tensor tokens_to_grid(const torch::Tensor& tokens, int64_t h, int64_t w);

// Grids at strides 8/16/32 of one common (H, W) -> concatenated pyramid.
TokenPyramid flatten_concat(const std::array<torch::Tensor, kNumLevels>& grids);

std::array<torch::Tensor, kNumLevels> split_levels(const TokenPyramid& pyramid);

// Per-level token slice (B, n_t, D) without reshaping to a grid.
torch::Tensor level_tokens(const TokenPyramid& pyramid, int level);

// Spatial resampling of a (B, C, h, w) map. Bilinear uses half-pixel centres
// (align_corners = false) and never leaves the input value range.
torch::Tensor resample(const torch::Tensor& map, int64_t target_h, int64_t target_w,
                       ResampleMode mode = ResampleMode::kBilinear);

std::string shape_string(const torch::Tensor& t);

}  // namespace hfit
