#include "hfit/vit_backbone.hpp"

#include <algorithm>

#include "hfit/checkpoint.hpp"
#include "hfit/errors.hpp"
#include "hfit/hash.hpp"

namespace hfit {

namespace F = torch::nn::functional;

EncoderLayerImpl::EncoderLayerImpl(int64_t dim, int64_t heads, double mlp_ratio) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", MultiHeadAttention(dim, heads));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  mlp = register_module("mlp", FeedForward(dim, mlp_ratio));
}

torch::Tensor EncoderLayerImpl::forward(const torch::Tensor& x, torch::Tensor* attention) {
  auto h = norm1(x);
  auto y = x + attn(h, h, attention);
  return y + mlp(norm2(y));
}

VitBackboneImpl::VitBackboneImpl(const BackboneConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.embed_dim;
  patch_proj = register_module(
      "patch_proj", torch::nn::Conv2d(torch::nn::Conv2dOptions(3, d, config_.patch_size)
                                          .stride(config_.patch_size)));
  pos_table = register_parameter(
      "pos_table", torch::zeros({1, config_.pos_table_side * config_.pos_table_side, d}));
  layers = register_module("layers", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.depth; ++i) {
    layers->push_back(EncoderLayer(d, config_.heads, config_.mlp_ratio));
  }
  init_weights();
}

void VitBackboneImpl::init_weights() {
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(config_.seed);
  for (auto& item : named_parameters(true)) {
    const auto& name = item.key();
    auto& p = item.value();
    const bool is_norm = name.find("norm") != std::string::npos;
    if (name.ends_with("bias")) {
      p.zero_();
    } else if (is_norm) {
      p.fill_(1.0);
    } else {
      trunc_normal_(p, 0.02, gen);
    }
  }
}

torch::Tensor VitBackboneImpl::position_embedding(int64_t grid_h, int64_t grid_w) const {
  const auto side = config_.pos_table_side;
  if (grid_h == side && grid_w == side) return pos_table;
  auto grid = tokens_to_grid(pos_table, side, side);
  grid = F::interpolate(grid, F::InterpolateFuncOptions()
                                  .size(std::vector<int64_t>{grid_h, grid_w})
                                  .mode(torch::kBicubic)
                                  .align_corners(false));
  return grid_to_tokens(grid);
}

ViTTokens VitBackboneImpl::patch_embed(const torch::Tensor& rgb) {
  if (rgb.dim() != 4 || rgb.size(1) != 3) {
    throw ShapeError("patch_embed expects (B, 3, H, W), got " + shape_string(rgb));
  }
  check_input_size(rgb.size(2), rgb.size(3));
  auto grid = patch_proj(rgb);
  const auto gh = grid.size(2), gw = grid.size(3);
  auto tokens = grid_to_tokens(grid) + position_embedding(gh, gw);
  return ViTTokens{tokens, gh, gw};
}

ViTTokens VitBackboneImpl::run_stage(const ViTTokens& tokens, int64_t stage) {
  if (stage < 1 || stage > config_.stages) {
    throw IndexError("stage index " + std::to_string(stage) + " outside [1, " +
                     std::to_string(config_.stages) + "]");
  }
  if (tokens.dim() != config_.embed_dim) {
    throw ShapeError("backbone expects token dim " + std::to_string(config_.embed_dim));
  }
  const auto per = config_.layers_per_stage();
  auto x = tokens.tokens;
  for (int64_t l = (stage - 1) * per; l < stage * per; ++l) {
    x = layers->ptr<EncoderLayerImpl>(l)->forward(x);
  }
  return tokens.with_tokens(x);
}

ViTTokens VitBackboneImpl::run_all(const ViTTokens& tokens) {
  auto x = tokens.tokens;
  for (const auto& layer : *layers) x = layer->as<EncoderLayerImpl>()->forward(x);
  return tokens.with_tokens(x);
}

void VitBackboneImpl::freeze() {
  for (auto& p : parameters()) p.set_requires_grad(false);
  frozen_ = true;
}

void VitBackboneImpl::unfreeze() {
  for (auto& p : parameters()) p.set_requires_grad(true);
  frozen_ = false;
}

uint64_t VitBackboneImpl::checksum() const {
  uint64_t h = kFnvOffset;
  for (const auto& p : parameters()) h = tensor_checksum(p, h);
  return h;
}

void save_backbone(VitBackbone& backbone, const std::filesystem::path& path) {
  Checkpoint c;
  c.kind = "backbone";
  c.config_yaml = emit_yaml(backbone->config());
  for (const auto& item : backbone->named_parameters(true)) {
    c.tensors.push_back({"backbone." + item.key(), item.value().detach().clone()});
  }
  write_checkpoint(c, path);
}

void load_pretrained(VitBackbone& backbone, const std::filesystem::path& path) {
  const Checkpoint c = read_checkpoint(path);
  BackboneConfig stored;
  if (c.kind == "backbone") {
    stored = backbone_config_from_yaml(c.config_yaml);
  } else if (c.kind == "hfit") {
    stored = hfit_config_from_yaml(c.config_yaml).backbone;
  } else {
    throw IoError("checkpoint '" + path.string() + "' has unknown kind '" + c.kind + "'");
  }
  const auto& cfg = backbone->config();
  // Validate every tensor before touching any parameter.
  std::vector<std::pair<torch::Tensor, torch::Tensor>> assignments;
  auto params = backbone->named_parameters(true).items();
  // Patch projection first: it is the tensor that reveals a width mismatch.
  std::stable_partition(params.begin(), params.end(),
                        [](const auto& item) { return item.key().starts_with("patch_proj"); });
  for (auto& item : params) {
    const auto& name = item.key();
    auto& p = item.value();
    const auto full = "backbone." + name;
    const torch::Tensor* src = c.find(full);
    if (!src) throw ShapeError("checkpoint is missing tensor '" + full + "'");
    torch::Tensor value = *src;
    if (name == "pos_table" && stored.pos_table_side != cfg.pos_table_side &&
        value.dim() == 3 && value.size(2) == p.size(2) &&
        value.size(1) == stored.pos_table_side * stored.pos_table_side) {
      auto grid = tokens_to_grid(value.to(p.dtype()), stored.pos_table_side, stored.pos_table_side);
      grid = F::interpolate(grid, F::InterpolateFuncOptions()
                                      .size(std::vector<int64_t>{cfg.pos_table_side,
                                                                 cfg.pos_table_side})
                                      .mode(torch::kBicubic)
                                      .align_corners(false));
      value = grid_to_tokens(grid);
    }
    if (value.sizes() != p.sizes()) {
      throw ShapeError("tensor '" + full + "' has shape " + shape_string(value) +
                       " in the checkpoint but " + shape_string(p) + " in the model");
    }
    assignments.emplace_back(p, value);
  }
  torch::NoGradGuard no_grad;
  for (auto& [dst, src] : assignments) dst.copy_(src);
}

}  // namespace hfit
