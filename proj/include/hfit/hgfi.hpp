#pragma once

// Holistic gated feature integration.
//
// Gates are sigmoid maps with one value per token and channel:
//   ViT branch:   G = sigmoid(Conv1x1(F))
//   prior branch: G = sigmoid(DW_{k_t}(F_t)) per pyramid level t
// A stage's feature is merged with the gated history of earlier stages:
//   out = (1 + G_cur) * F_cur + (1 - G_cur) * sum_l G_l * F_l
// and the extractor refreshes the prior from the integrated ViT tokens:
//   F^ = F_S + MHA(LN(F_S), LN(F_V));  out = F^ + FFN(LN(F^))

#include <torch/torch.h>

#include <vector>

#include "hfit/config.hpp"
#include "hfit/layout.hpp"
#include "hfit/nn_blocks.hpp"

namespace hfit {

// Features and gates of completed stages for one branch.
class StageHistory {
 public:
  void push(torch::Tensor feature, torch::Tensor gate);
  size_t size() const { return features_.size(); }
  bool empty() const { return features_.empty(); }
  const std::vector<torch::Tensor>& features() const { return features_; }
  const std::vector<torch::Tensor>& gates() const { return gates_; }

  // sum_l G_l * F_l; undefined tensor when empty.
  torch::Tensor gated_sum() const;

 private:
  std::vector<torch::Tensor> features_;
  std::vector<torch::Tensor> gates_;
};

// (1 + G) * F + (1 - G) * sum_l G_l * F_l. With `enabled == false` the current
// feature passes through untouched.
torch::Tensor integrate(const torch::Tensor& current, const torch::Tensor& gate,
                        const StageHistory& history, bool enabled = true);

ViTTokens integrate_vit(const ViTTokens& current, const torch::Tensor& gate,
                        const StageHistory& history, bool enabled = true);

TokenPyramid integrate_prior(const TokenPyramid& current, const torch::Tensor& gate,
                             const StageHistory& history, bool enabled = true);

class VitGateImpl : public torch::nn::Module {
 public:
  explicit VitGateImpl(int64_t dim);
  torch::Tensor forward(const ViTTokens& tokens);

  torch::nn::Linear proj{nullptr};
};
TORCH_MODULE(VitGate);

class PriorGateImpl : public torch::nn::Module {
 public:
  PriorGateImpl(int64_t dim, const std::array<int64_t, 3>& kernels);
  torch::Tensor forward(const TokenPyramid& prior);

  std::array<torch::nn::Conv2d, kNumLevels> depthwise{nullptr, nullptr, nullptr};
};
TORCH_MODULE(PriorGate);

class ExtractorImpl : public torch::nn::Module {
 public:
  ExtractorImpl(int64_t dim, int64_t heads, double ffn_ratio);
  TokenPyramid forward(const TokenPyramid& prior, const ViTTokens& vit,
                       torch::Tensor* attention = nullptr);

  torch::nn::LayerNorm query_norm{nullptr}, context_norm{nullptr}, ffn_norm{nullptr};
  MultiHeadAttention attn{nullptr};
  FeedForward ffn{nullptr};
};
TORCH_MODULE(Extractor);

class HgfiStageImpl : public torch::nn::Module {
 public:
  HgfiStageImpl(const HgfiConfig& config, int64_t dim);

  VitGate vit_gate{nullptr};
  PriorGate prior_gate{nullptr};
  Extractor extractor{nullptr};
};
TORCH_MODULE(HgfiStage);

}  // namespace hfit
