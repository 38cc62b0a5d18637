#pragma once

// Duplex spatial prior extractor: twin convolutional stems over the RGB image
// and the 3-channel relative depth, each producing stride 8/16/32 features.
// Per level the two branches are summed and projected to D channels by a 1x1
// convolution, then flattened into the token pyramid.

#include <torch/torch.h>

#include <array>

#include "hfit/config.hpp"
#include "hfit/layout.hpp"
#include "hfit/nn_blocks.hpp"

namespace hfit {

using LevelGrids = std::array<torch::Tensor, kNumLevels>;

enum class Branch { kRgb, kDepth };

// input -> s2 -> s2 -> s2 (stride 8, C_2) -> s2 (stride 16, C_3) -> s2 (stride 32, C_4)
class StemImpl : public torch::nn::Module {
 public:
  explicit StemImpl(const StemConfig& config);
  LevelGrids forward(const torch::Tensor& image);

 private:
  torch::nn::Sequential stage8_{nullptr}, stage16_{nullptr}, stage32_{nullptr};
};
TORCH_MODULE(Stem);

class DspeImpl : public torch::nn::Module {
 public:
  DspeImpl(const StemConfig& stem, int64_t dim);

  // image: (B, 3, H, W). Grids (B, C_l, H/S_l, W/S_l).
  LevelGrids extract_pyramid(const torch::Tensor& image, Branch branch);

  // Per level: project_1x1(rgb + depth) with D output channels.
  LevelGrids fuse_and_project(const LevelGrids& rgb, const LevelGrids& depth);

  TokenPyramid build_prior(const torch::Tensor& rgb, const torch::Tensor& depth3);

  const StemConfig& config() const { return config_; }

  Stem rgb_stem{nullptr}, depth_stem{nullptr};
  std::array<torch::nn::Conv2d, kNumLevels> projections{nullptr, nullptr, nullptr};

 private:
  StemConfig config_;
  int64_t dim_;
};
TORCH_MODULE(Dspe);

}  // namespace hfit
