#include "hfit/nn_blocks.hpp"

#include <cmath>

#include "hfit/errors.hpp"

namespace hfit {

namespace F = torch::nn::functional;

void trunc_normal_(torch::Tensor& t, double std, std::optional<at::Generator> gen) {
  torch::NoGradGuard no_grad;
  // Draw, then redraw out-of-range entries.
  t.normal_(0.0, std, gen);
  for (int attempt = 0; attempt < 16; ++attempt) {
    auto outside = t.abs() > 2.0 * std;
    if (!outside.any().item<bool>()) return;
    auto fresh = torch::empty_like(t).normal_(0.0, std, gen);
    t.copy_(torch::where(outside, fresh, t));
  }
  t.clamp_(-2.0 * std, 2.0 * std);
}

MultiHeadAttentionImpl::MultiHeadAttentionImpl(int64_t dim, int64_t heads)
    : dim_(dim), heads_(heads) {
  if (heads <= 0 || dim % heads != 0) {
    throw ConfigError("attention dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  q = register_module("q", torch::nn::Linear(dim, dim));
  k = register_module("k", torch::nn::Linear(dim, dim));
  v = register_module("v", torch::nn::Linear(dim, dim));
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor MultiHeadAttentionImpl::forward(const torch::Tensor& query,
                                              const torch::Tensor& context,
                                              torch::Tensor* weights) {
  if (query.size(-1) != dim_ || context.size(-1) != dim_) {
    throw ShapeError("attention expects token dim " + std::to_string(dim_));
  }
  const int64_t b = query.size(0), tq = query.size(1), tk = context.size(1);
  const int64_t hd = dim_ / heads_;
  auto split = [&](const torch::Tensor& x, int64_t n) {
    return x.view({b, n, heads_, hd}).transpose(1, 2);
  };
  auto qh = split(q(query), tq);
  auto kh = split(k(context), tk);
  auto vh = split(v(context), tk);
  auto attn = torch::softmax(torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(double(hd)), -1);
  if (weights) *weights = attn;
  auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({b, tq, dim_});
  return proj(out);
}

FeedForwardImpl::FeedForwardImpl(int64_t dim, double ratio) {
  const auto hidden = static_cast<int64_t>(std::llround(dim * ratio));
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor FeedForwardImpl::forward(const torch::Tensor& x) {
  return fc2(F::gelu(fc1(x)));
}

ConvNormActImpl::ConvNormActImpl(int64_t in, int64_t out, int64_t kernel, int64_t stride,
                                 int64_t groups, bool activation)
    : activation_(activation) {
  conv = register_module(
      "conv", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, kernel)
                                    .stride(stride)
                                    .padding(kernel / 2)
                                    .groups(groups)
                                    .bias(false)));
  norm = register_module("norm", torch::nn::BatchNorm2d(out));
}

torch::Tensor ConvNormActImpl::forward(const torch::Tensor& x) {
  auto y = norm(conv(x));
  return activation_ ? F::silu(y) : y;
}

InvertedBottleneckImpl::InvertedBottleneckImpl(int64_t in, int64_t out, int64_t stride,
                                               int64_t expand_ratio)
    : residual_(stride == 1 && in == out) {
  const int64_t hidden = in * expand_ratio;
  expand_ = register_module("expand", ConvNormAct(in, hidden, 1, 1));
  depthwise_ = register_module("depthwise", ConvNormAct(hidden, hidden, 3, stride, hidden));
  project_ = register_module("project", ConvNormAct(hidden, out, 1, 1, 1, false));
}

torch::Tensor InvertedBottleneckImpl::forward(const torch::Tensor& x) {
  auto y = project_(depthwise_(expand_(x)));
  return residual_ ? x + y : y;
}

}  // namespace hfit
