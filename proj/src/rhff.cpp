#include "hfit/rhff.hpp"

#include "hfit/errors.hpp"

namespace hfit {

LogitHeadImpl::LogitHeadImpl(int64_t dim, int64_t classes) {
  proj = register_module("proj", torch::nn::Linear(torch::nn::LinearOptions(dim, classes).bias(false)));
  norm = register_module("norm", torch::nn::BatchNorm1d(classes));
}

torch::Tensor LogitHeadImpl::forward(const torch::Tensor& tokens) {
  // BatchNorm1d normalizes (B, C, T) per channel.
  auto y = norm(proj(tokens).transpose(1, 2)).transpose(1, 2);
  return torch::relu(y);
}

torch::Tensor logit_map(const torch::Tensor& tokens, int64_t grid_h, int64_t grid_w,
                        LogitHead& head) {
  if (tokens.dim() != 3 || tokens.size(1) != grid_h * grid_w) {
    throw ShapeError("cannot build a " + std::to_string(grid_h) + "x" + std::to_string(grid_w) +
                     " logit map from tokens " + shape_string(tokens));
  }
  return tokens_to_grid(head(tokens), grid_h, grid_w);
}

torch::nn::Conv2d make_entropy_conv(int64_t classes, int64_t kernel, int64_t dilation) {
  torch::nn::Conv2d conv(torch::nn::Conv2dOptions(classes, 1, kernel)
                             .dilation(dilation)
                             .padding(dilation * (kernel - 1) / 2));
  torch::NoGradGuard no_grad;
  conv->bias.zero_();
  return conv;
}

torch::Tensor confidence_from_logits(const torch::Tensor& logits, torch::nn::Conv2d& conv,
                                     double eps) {
  auto entropy = -logits * torch::log(logits + eps);
  return torch::sigmoid(conv(entropy));
}

TokenPyramid recalibrate(const TokenPyramid& prior, const torch::Tensor& vit_confidence,
                         const torch::Tensor& prior_confidence, bool use_rgb_weight,
                         bool use_depth_weight) {
  const auto total = prior.total_tokens();
  for (const auto* c : {&vit_confidence, &prior_confidence}) {
    if (c->dim() != 3 || c->size(1) != total || c->size(2) != 1) {
      throw ShapeError("confidence vector " + shape_string(*c) + " does not cover " +
                       std::to_string(total) + " pyramid tokens");
    }
  }
  auto tokens = prior.tokens;
  if (use_rgb_weight && use_depth_weight) {
    tokens = (1.0 - vit_confidence) * prior_confidence * tokens;
  } else if (use_rgb_weight) {
    tokens = (1.0 - vit_confidence) * tokens;
  } else if (use_depth_weight) {
    tokens = prior_confidence * tokens;
  }
  return prior.with_tokens(tokens);
}

InjectorImpl::InjectorImpl(int64_t dim, int64_t heads) {
  query_norm = register_module("query_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  context_norm =
      register_module("context_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  gamma = register_parameter("gamma", torch::zeros({dim}));
}

ViTTokens InjectorImpl::forward(const ViTTokens& vit, const TokenPyramid& prior,
                                torch::Tensor* attention) {
  if (vit.dim() != prior.dim() || vit.dim() != gamma.size(0)) {
    throw ShapeError("injection dimension mismatch: ViT " + std::to_string(vit.dim()) +
                     ", prior " + std::to_string(prior.dim()));
  }
  auto update = attn(query_norm(vit.tokens), context_norm(prior.tokens), attention);
  return vit.with_tokens(vit.tokens + gamma * update);
}

RhffStageImpl::RhffStageImpl(const RhffConfig& config, int64_t dim, int64_t classes)
    : config_(config), align_mode_(parse_resample_mode(config.align_mode)) {
  config_.validate(dim);
  vit_head = register_module("vit_head", LogitHead(dim, classes));
  prior_head = register_module("prior_head", LogitHead(dim, classes));
  vit_entropy = register_module("vit_entropy",
                                make_entropy_conv(classes, config_.kernel, config_.dilation));
  prior_entropy = register_module("prior_entropy",
                                  make_entropy_conv(classes, config_.kernel, config_.dilation));
  injector = register_module("injector", Injector(dim, config_.heads));
}

torch::Tensor RhffStageImpl::vit_confidence(const ViTTokens& vit, const LevelLayout& layout) {
  const auto& mid = layout[1];
  if (vit.grid_h != mid.grid_h || vit.grid_w != mid.grid_w) {
    throw ShapeError("ViT grid does not match the stride-16 pyramid level");
  }
  auto conf16 = confidence_from_logits(logit_map(vit.tokens, vit.grid_h, vit.grid_w, vit_head),
                                       vit_entropy, config_.eps);
  std::array<torch::Tensor, kNumLevels> levels;
  for (int t = 0; t < kNumLevels; ++t) {
    levels[t] = resample(conf16, layout[t].grid_h, layout[t].grid_w, align_mode_);
  }
  return flatten_concat(levels).tokens;
}

torch::Tensor RhffStageImpl::prior_confidence(const TokenPyramid& prior) {
  // The 1x1 conv + BN act per token, so they run on the whole pyramid at once;
  // the atrous conv runs on each level's own grid.
  auto grids = split_levels(prior.with_tokens(prior_head(prior.tokens)));
  for (auto& g : grids) g = confidence_from_logits(g, prior_entropy, config_.eps);
  return flatten_concat(grids).tokens;
}

ViTTokens RhffStageImpl::inject(const ViTTokens& vit, const TokenPyramid& prior,
                                torch::Tensor* attention) {
  return injector(vit, prior, attention);
}

}  // namespace hfit
