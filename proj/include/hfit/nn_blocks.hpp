#pragma once

// Small building blocks shared by the backbone and the adapter.

#include <torch/torch.h>

#include <optional>

namespace hfit {

// In-place truncated normal on [-2*std, 2*std].
void trunc_normal_(torch::Tensor& t, double std = 0.02,
                   std::optional<at::Generator> gen = std::nullopt);

// Dense multi-head attention from `query` tokens (B, Tq, D) to `context`
// tokens (B, Tk, D). Self-attention is the case query == context.
class MultiHeadAttentionImpl : public torch::nn::Module {
 public:
  MultiHeadAttentionImpl(int64_t dim, int64_t heads);

  // When `weights` is given it receives the (B, heads, Tq, Tk) softmax matrix.
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context,
                        torch::Tensor* weights = nullptr);

  int64_t heads() const { return heads_; }

  torch::nn::Linear q{nullptr}, k{nullptr}, v{nullptr}, proj{nullptr};

 private:
  int64_t dim_;
  int64_t heads_;
};
TORCH_MODULE(MultiHeadAttention);

// Linear(D, ratio*D) -> GELU -> Linear(ratio*D, D); callers apply the norm.
class FeedForwardImpl : public torch::nn::Module {
 public:
  FeedForwardImpl(int64_t dim, double ratio);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(FeedForward);

// conv(k, stride) -> BatchNorm -> SiLU
class ConvNormActImpl : public torch::nn::Module {
 public:
  ConvNormActImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride, int64_t groups = 1,
                  bool activation = true);
  torch::Tensor forward(const torch::Tensor& x);

  torch::nn::Conv2d conv{nullptr};
  torch::nn::BatchNorm2d norm{nullptr};

 private:
  bool activation_;
};
TORCH_MODULE(ConvNormAct);

// EfficientNet-style inverted bottleneck: expand 1x1 -> depthwise 3x3 (stride)
// -> project 1x1. Residual only when shape is preserved.
class InvertedBottleneckImpl : public torch::nn::Module {
 public:
  InvertedBottleneckImpl(int64_t in, int64_t out, int64_t stride, int64_t expand_ratio = 4);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  ConvNormAct expand_{nullptr}, depthwise_{nullptr}, project_{nullptr};
  bool residual_;
};
TORCH_MODULE(InvertedBottleneck);

}  // namespace hfit
