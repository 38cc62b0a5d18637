#pragma once

// Recalibrated heterogeneous feature fusion.
//
// For each interaction stage:
//   L      = ReLU(BN(Conv1x1(tokens as grid)))              class logit map
//   C      = sigmoid(AtrousConv_{k,r}(-L * log(L + eps)))    confidence map
//   C_V    : ViT confidence at stride 16, resampled to strides 8 and 32
//   C_S    : per-level prior confidence on each native grid
//   F_S'   = (1 - C_V) * C_S * F_S                           recalibration
//   F_V'   = F_V + gamma * MHA(LN(F_V), LN(F_S'))            injection

#include <torch/torch.h>

#include "hfit/config.hpp"
#include "hfit/layout.hpp"
#include "hfit/nn_blocks.hpp"

namespace hfit {

// 1x1 conv (as a per-token linear map, no bias) -> BatchNorm -> ReLU.
class LogitHeadImpl : public torch::nn::Module {
 public:
  LogitHeadImpl(int64_t dim, int64_t classes);
  // (B, T, D) -> (B, T, C), all entries >= 0.
  torch::Tensor forward(const torch::Tensor& tokens);

  torch::nn::Linear proj{nullptr};
  torch::nn::BatchNorm1d norm{nullptr};
};
TORCH_MODULE(LogitHead);

// Class logit map of a token grid, (B, C, h, w).
torch::Tensor logit_map(const torch::Tensor& tokens, int64_t grid_h, int64_t grid_w,
                        LogitHead& head);

// Atrous k x k conv (dilation r, C -> 1, same padding).
torch::nn::Conv2d make_entropy_conv(int64_t classes, int64_t kernel, int64_t dilation);

// sigmoid(conv(-L * log(L + eps))) for a non-negative logit map L.
torch::Tensor confidence_from_logits(const torch::Tensor& logits, torch::nn::Conv2d& conv,
                                     double eps);

// (1 - C_V) * C_S * F_S broadcast over channels. Confidences are (B, T, 1).
// A disabled weight is replaced by 1.
TokenPyramid recalibrate(const TokenPyramid& prior, const torch::Tensor& vit_confidence,
                         const torch::Tensor& prior_confidence, bool use_rgb_weight = true,
                         bool use_depth_weight = true);

// F_V + gamma * MHA(LN(F_V), LN(F_S)).
class InjectorImpl : public torch::nn::Module {
 public:
  InjectorImpl(int64_t dim, int64_t heads);
  ViTTokens forward(const ViTTokens& vit, const TokenPyramid& prior,
                    torch::Tensor* attention = nullptr);

  torch::nn::LayerNorm query_norm{nullptr}, context_norm{nullptr};
  MultiHeadAttention attn{nullptr};
  torch::Tensor gamma;  // (D), zero at initialization
};
TORCH_MODULE(Injector);

// Parameters of one interaction stage.
class RhffStageImpl : public torch::nn::Module {
 public:
  RhffStageImpl(const RhffConfig& config, int64_t dim, int64_t classes);

  // ViT confidence over the pyramid layout, (B, T_total, 1).
  torch::Tensor vit_confidence(const ViTTokens& vit, const LevelLayout& layout);

  // Prior confidence, each level on its own grid, (B, T_total, 1).
  torch::Tensor prior_confidence(const TokenPyramid& prior);

  ViTTokens inject(const ViTTokens& vit, const TokenPyramid& prior,
                   torch::Tensor* attention = nullptr);

  LogitHead vit_head{nullptr}, prior_head{nullptr};
  torch::nn::Conv2d vit_entropy{nullptr}, prior_entropy{nullptr};
  Injector injector{nullptr};

 private:
  RhffConfig config_;
  ResampleMode align_mode_;
};
TORCH_MODULE(RhffStage);

}  // namespace hfit
