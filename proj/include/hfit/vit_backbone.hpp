#pragma once

// Plain ViT: 16x16 patch embedding, learned absolute position table (bicubic
// resize to the token grid), L pre-norm encoder layers, no class token. The
// layers are partitioned into N equal stages so the adapter can interleave
// with them.

#include <torch/torch.h>

#include <filesystem>

#include "hfit/config.hpp"
#include "hfit/layout.hpp"
#include "hfit/nn_blocks.hpp"

namespace hfit {

class EncoderLayerImpl : public torch::nn::Module {
 public:
  EncoderLayerImpl(int64_t dim, int64_t heads, double mlp_ratio);
  torch::Tensor forward(const torch::Tensor& x, torch::Tensor* attention = nullptr);

  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  MultiHeadAttention attn{nullptr};
  FeedForward mlp{nullptr};
};
TORCH_MODULE(EncoderLayer);

class VitBackboneImpl : public torch::nn::Module {
 public:
  explicit VitBackboneImpl(const BackboneConfig& config);

  // rgb: (B, 3, H, W) in [0, 1], H and W multiples of 32.
  ViTTokens patch_embed(const torch::Tensor& rgb);

  // Applies layers [(i-1)*L/N, i*L/N) for the 1-based stage index i.
  ViTTokens run_stage(const ViTTokens& tokens, int64_t stage);

  // All L layers in one loop, without stage boundaries.
  ViTTokens run_all(const ViTTokens& tokens);

  // Position table resized to a grid_h x grid_w token grid, (1, gh*gw, D).
  torch::Tensor position_embedding(int64_t grid_h, int64_t grid_w) const;

  // Excludes every backbone parameter from gradient updates. Gradients still
  // flow through the backbone activations.
  void freeze();
  void unfreeze();
  bool frozen() const { return frozen_; }

  // Hash of every parameter byte, in registration order.
  uint64_t checksum() const;

  const BackboneConfig& config() const { return config_; }

  torch::nn::Conv2d patch_proj{nullptr};
  torch::Tensor pos_table;  // (1, side*side, D)
  torch::nn::ModuleList layers{nullptr};

 private:
  void init_weights();

  BackboneConfig config_;
  bool frozen_ = false;
};
TORCH_MODULE(VitBackbone);

// Backbone-only checkpoint. Tensor names are "backbone.<param>".
void save_backbone(VitBackbone& backbone, const std::filesystem::path& path);

// Loads backbone weights from a backbone or full-model checkpoint. The
// embedded config must agree on dim/depth/heads/mlp width; a different
// position-table side is resized bicubically. ShapeError names the first
// mismatching tensor.
void load_pretrained(VitBackbone& backbone, const std::filesystem::path& path);

}  // namespace hfit
