#include "hfit/layout.hpp"

#include <sstream>

#include "hfit/errors.hpp"

namespace hfit {

namespace F = torch::nn::functional;

std::string shape_string(const torch::Tensor& t) {
  std::ostringstream os;
  os << '(';
  for (int64_t i = 0; i < t.dim(); ++i) {
    if (i) os << ", ";
    os << t.size(i);
  }
  os << ')';
  return os.str();
}

void check_input_size(int64_t height, int64_t width) {
  if (height <= 0 || width <= 0 || height % 32 != 0 || width % 32 != 0) {
    throw ShapeError("input size " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not a positive multiple of 32");
  }
}

LevelLayout pyramid_layout(int64_t height, int64_t width) {
  check_input_size(height, width);
  LevelLayout layout{};
  int64_t offset = 0;
  for (int t = 0; t < kNumLevels; ++t) {
    const int64_t s = kLevelStrides[t];
    layout[t] = LevelSpec{s, height / s, width / s, offset};
    offset += layout[t].num_tokens();
  }
  return layout;
}

int64_t pyramid_token_count(int64_t height, int64_t width) {
  check_input_size(height, width);
  return height * width * 21 / 1024;
}

int64_t TokenPyramid::total_tokens() const {
  const auto& last = levels.back();
  return last.token_offset + last.num_tokens();
}

TokenPyramid TokenPyramid::with_tokens(torch::Tensor new_tokens) const {
  if (new_tokens.dim() != 3 || new_tokens.size(1) != total_tokens()) {
    throw ShapeError("pyramid token tensor " + shape_string(new_tokens) + " does not hold " +
                     std::to_string(total_tokens()) + " tokens");
  }
  return TokenPyramid{std::move(new_tokens), levels};
}

ViTTokens ViTTokens::with_tokens(torch::Tensor new_tokens) const {
  if (new_tokens.dim() != 3 || new_tokens.size(1) != grid_h * grid_w) {
    throw ShapeError("ViT token tensor " + shape_string(new_tokens) + " does not match grid " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w));
  }
  return ViTTokens{std::move(new_tokens), grid_h, grid_w};
}

ResampleMode parse_resample_mode(const std::string& name) {
  if (name == "bilinear") return ResampleMode::kBilinear;
  if (name == "nearest") return ResampleMode::kNearest;
  throw ConfigError("unknown resample mode '" + name + "' (expected bilinear|nearest)");
}

std::string to_string(ResampleMode mode) {
  return mode == ResampleMode::kBilinear ? "bilinear" : "nearest";
}

torch::Tensor grid_to_tokens(const torch::Tensor& grid) {
  if (grid.dim() != 4) throw ShapeError("expected a (B, D, h, w) grid, got " + shape_string(grid));
  return grid.flatten(2).transpose(1, 2).contiguous();
}

torch::Tensor tokens_to_grid(const torch::Tensor& tokens, int64_t h, int64_t w) {
  if (tokens.dim() != 3 || h < 1 || w < 1 || tokens.size(1) != h * w) {
    throw ShapeError("cannot reshape tokens " + shape_string(tokens) + " into a " +
                     std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  return tokens.transpose(1, 2).reshape({tokens.size(0), tokens.size(2), h, w});
}

TokenPyramid flatten_concat(const std::array<torch::Tensor, kNumLevels>& grids) {
  for (const auto& g : grids) {
    if (g.dim() != 4) throw ShapeError("pyramid level must be (B, D, h, w), got " + shape_string(g));
  }
  const int64_t height = grids[0].size(2) * kLevelStrides[0];
  const int64_t width = grids[0].size(3) * kLevelStrides[0];
  if (height % 32 != 0 || width % 32 != 0) {
    throw ShapeError("stride-8 level " + shape_string(grids[0]) +
                     " does not come from a multiple-of-32 raster");
  }
  const LevelLayout layout = pyramid_layout(height, width);
  std::vector<torch::Tensor> parts;
  for (int t = 0; t < kNumLevels; ++t) {
    const auto& g = grids[t];
    if (g.size(2) != layout[t].grid_h || g.size(3) != layout[t].grid_w ||
        g.size(0) != grids[0].size(0) || g.size(1) != grids[0].size(1)) {
      throw ShapeError("pyramid level " + std::to_string(t) + " has shape " + shape_string(g) +
                       ", inconsistent with a " + std::to_string(height) + "x" +
                       std::to_string(width) + " raster");
    }
    parts.push_back(grid_to_tokens(g));
  }
  return TokenPyramid{torch::cat(parts, 1), layout};
}

torch::Tensor level_tokens(const TokenPyramid& pyramid, int level) {
  const auto& spec = pyramid.levels.at(level);
  return pyramid.tokens.narrow(1, spec.token_offset, spec.num_tokens());
}

std::array<torch::Tensor, kNumLevels> split_levels(const TokenPyramid& pyramid) {
  std::array<torch::Tensor, kNumLevels> grids;
  for (int t = 0; t < kNumLevels; ++t) {
    const auto& spec = pyramid.levels[t];
    grids[t] = tokens_to_grid(level_tokens(pyramid, t), spec.grid_h, spec.grid_w);
  }
  return grids;
}

torch::Tensor resample(const torch::Tensor& map, int64_t target_h, int64_t target_w,
                       ResampleMode mode) {
  if (map.dim() != 4) throw ShapeError("resample expects (B, C, h, w), got " + shape_string(map));
  if (target_h < 1 || target_w < 1) throw ShapeError("resample target must be at least 1x1");
  if (map.size(2) == target_h && map.size(3) == target_w) return map;
  auto opts = F::InterpolateFuncOptions().size(std::vector<int64_t>{target_h, target_w});
  if (mode == ResampleMode::kBilinear) {
    opts.mode(torch::kBilinear).align_corners(false);
  } else {
    opts.mode(torch::kNearest);
  }
  return F::interpolate(map, opts);
}

}  // namespace hfit
