#include "hfit/dspe.hpp"

#include <algorithm>

#include "hfit/errors.hpp"

namespace hfit {

namespace {

torch::nn::AnyModule make_block(StemBlock kind, int64_t in, int64_t out) {
  if (kind == StemBlock::kPlainConv) return torch::nn::AnyModule(ConvNormAct(in, out, 3, 2));
  return torch::nn::AnyModule(InvertedBottleneck(in, out, 2));
}

}  // namespace

StemImpl::StemImpl(const StemConfig& config) {
  const auto [c2, c3, c4] = config.channels;
  const int64_t c0 = std::max<int64_t>(8, c2 / 2);
  stage8_ = torch::nn::Sequential();
  // The first conv always reads the raw 3-channel image.
  stage8_->push_back(ConvNormAct(3, c0, 3, 2));
  stage8_->push_back(make_block(config.block, c0, c0));
  stage8_->push_back(make_block(config.block, c0, c2));
  stage16_ = torch::nn::Sequential();
  stage16_->push_back(make_block(config.block, c2, c3));
  stage32_ = torch::nn::Sequential();
  stage32_->push_back(make_block(config.block, c3, c4));
  register_module("stage8", stage8_);
  register_module("stage16", stage16_);
  register_module("stage32", stage32_);
}

LevelGrids StemImpl::forward(const torch::Tensor& image) {
  auto f8 = stage8_->forward(image);
  auto f16 = stage16_->forward(f8);
  auto f32 = stage32_->forward(f16);
  return {f8, f16, f32};
}

DspeImpl::DspeImpl(const StemConfig& stem, int64_t dim) : config_(stem), dim_(dim) {
  config_.validate();
  rgb_stem = register_module("rgb_stem", Stem(config_));
  if (config_.shared_branches) {
    depth_stem = rgb_stem;
  } else {
    depth_stem = register_module("depth_stem", Stem(config_));
  }
  for (int t = 0; t < kNumLevels; ++t) {
    projections[t] = register_module(
        "proj" + std::to_string(kLevelStrides[t]),
        torch::nn::Conv2d(
            torch::nn::Conv2dOptions(config_.channels[t], dim, 1).bias(config_.projection_bias)));
  }
}

LevelGrids DspeImpl::extract_pyramid(const torch::Tensor& image, Branch branch) {
  if (image.dim() != 4 || image.size(1) != 3) {
    throw ShapeError("DSPE expects a (B, 3, H, W) raster, got " + shape_string(image));
  }
  check_input_size(image.size(2), image.size(3));
  return branch == Branch::kRgb ? rgb_stem->forward(image) : depth_stem->forward(image);
}

LevelGrids DspeImpl::fuse_and_project(const LevelGrids& rgb, const LevelGrids& depth) {
  LevelGrids out;
  for (int t = 0; t < kNumLevels; ++t) {
    if (rgb[t].sizes() != depth[t].sizes()) {
      throw ShapeError("DSPE level " + std::to_string(t) + " shape mismatch: rgb " +
                       shape_string(rgb[t]) + " vs depth " + shape_string(depth[t]));
    }
    out[t] = projections[t]->forward(rgb[t] + depth[t]);
  }
  return out;
}

TokenPyramid DspeImpl::build_prior(const torch::Tensor& rgb, const torch::Tensor& depth3) {
  if (rgb.sizes() != depth3.sizes()) {
    throw ShapeError("rgb " + shape_string(rgb) + " and depth " + shape_string(depth3) +
                     " rasters differ in shape");
  }
  return flatten_concat(
      fuse_and_project(extract_pyramid(rgb, Branch::kRgb), extract_pyramid(depth3, Branch::kDepth)));
}

}  // namespace hfit
