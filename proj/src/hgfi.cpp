#include "hfit/hgfi.hpp"

#include "hfit/errors.hpp"

namespace hfit {

void StageHistory::push(torch::Tensor feature, torch::Tensor gate) {
  if (feature.sizes() != gate.sizes()) {
    throw ShapeError("history feature " + shape_string(feature) + " and gate " +
                     shape_string(gate) + " differ in shape");
  }
  if (!features_.empty() && features_.front().sizes() != feature.sizes()) {
    throw ShapeError("history entries must share one shape");
  }
  features_.push_back(std::move(feature));
  gates_.push_back(std::move(gate));
}

torch::Tensor StageHistory::gated_sum() const {
  torch::Tensor sum;
  for (size_t l = 0; l < features_.size(); ++l) {
    auto term = gates_[l] * features_[l];
    sum = sum.defined() ? sum + term : term;
  }
  return sum;
}

torch::Tensor integrate(const torch::Tensor& current, const torch::Tensor& gate,
                        const StageHistory& history, bool enabled) {
  if (!enabled) return current;
  if (gate.sizes() != current.sizes()) {
    throw ShapeError("gate " + shape_string(gate) + " does not match feature " +
                     shape_string(current));
  }
  if (!history.empty() && history.features().front().sizes() != current.sizes()) {
    throw ShapeError("history shape " + shape_string(history.features().front()) +
                     " does not match feature " + shape_string(current));
  }
  auto out = (1.0 + gate) * current;
  if (!history.empty()) out = out + (1.0 - gate) * history.gated_sum();
  return out;
}

ViTTokens integrate_vit(const ViTTokens& current, const torch::Tensor& gate,
                        const StageHistory& history, bool enabled) {
  return current.with_tokens(integrate(current.tokens, gate, history, enabled));
}

TokenPyramid integrate_prior(const TokenPyramid& current, const torch::Tensor& gate,
                             const StageHistory& history, bool enabled) {
  return current.with_tokens(integrate(current.tokens, gate, history, enabled));
}

VitGateImpl::VitGateImpl(int64_t dim) {
  proj = register_module("proj", torch::nn::Linear(dim, dim));
}

torch::Tensor VitGateImpl::forward(const ViTTokens& tokens) {
  return torch::sigmoid(proj(tokens.tokens));
}

PriorGateImpl::PriorGateImpl(int64_t dim, const std::array<int64_t, 3>& kernels) {
  for (int t = 0; t < kNumLevels; ++t) {
    depthwise[t] = register_module(
        "dw" + std::to_string(kLevelStrides[t]),
        torch::nn::Conv2d(
            torch::nn::Conv2dOptions(dim, dim, kernels[t]).padding(kernels[t] / 2).groups(dim)));
  }
}

torch::Tensor PriorGateImpl::forward(const TokenPyramid& prior) {
  auto grids = split_levels(prior);
  for (int t = 0; t < kNumLevels; ++t) grids[t] = torch::sigmoid(depthwise[t]->forward(grids[t]));
  return flatten_concat(grids).tokens;
}

ExtractorImpl::ExtractorImpl(int64_t dim, int64_t heads, double ffn_ratio) {
  const auto ln = [dim] { return torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})); };
  query_norm = register_module("query_norm", ln());
  context_norm = register_module("context_norm", ln());
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  ffn_norm = register_module("ffn_norm", ln());
  ffn = register_module("ffn", FeedForward(dim, ffn_ratio));
}

TokenPyramid ExtractorImpl::forward(const TokenPyramid& prior, const ViTTokens& vit,
                                    torch::Tensor* attention) {
  if (prior.dim() != vit.dim()) {
    throw ShapeError("extractor dimension mismatch: prior " + std::to_string(prior.dim()) +
                     ", ViT " + std::to_string(vit.dim()));
  }
  auto refreshed = prior.tokens + attn(query_norm(prior.tokens), context_norm(vit.tokens), attention);
  return prior.with_tokens(refreshed + ffn(ffn_norm(refreshed)));
}

HgfiStageImpl::HgfiStageImpl(const HgfiConfig& config, int64_t dim) {
  config.validate(dim);
  vit_gate = register_module("vit_gate", VitGate(dim));
  prior_gate = register_module("prior_gate", PriorGate(dim, config.gate_kernels));
  extractor = register_module("extractor", Extractor(dim, config.heads, config.ffn_ratio));
}

}  // namespace hfit
