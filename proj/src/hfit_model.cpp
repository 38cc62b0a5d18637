#include "hfit/hfit_model.hpp"

#include <iostream>
#include <set>

#include "hfit/errors.hpp"

namespace hfit {

namespace F = torch::nn::functional;

LevelGrids aggregate_outputs(const TokenPyramid& prior, const ViTTokens& vit) {
  auto grids = split_levels(prior);
  auto vit_grid = tokens_to_grid(vit.tokens, vit.grid_h, vit.grid_w);
  if (vit_grid.sizes() != grids[1].sizes()) {
    throw ShapeError("ViT grid " + shape_string(vit_grid) + " does not match stride-16 level " +
                     shape_string(grids[1]));
  }
  grids[1] = grids[1] + vit_grid;
  return grids;
}

DecoderImpl::DecoderImpl(int64_t dim, int64_t channels, int64_t classes) {
  for (int t = 0; t < kNumLevels; ++t) {
    projections[t] = register_module("proj" + std::to_string(kLevelStrides[t]),
                                     torch::nn::Conv2d(torch::nn::Conv2dOptions(dim, channels, 1)));
  }
  fuse1 = register_module("fuse1", ConvNormAct(channels, channels, 3, 1));
  fuse2 = register_module("fuse2", ConvNormAct(channels, channels, 3, 1));
  classifier = register_module("classifier",
                               torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, classes, 1)));
}

torch::Tensor DecoderImpl::forward(const LevelGrids& grids, int64_t out_h, int64_t out_w) {
  const auto h8 = grids[0].size(2), w8 = grids[0].size(3);
  torch::Tensor sum;
  for (int t = 0; t < kNumLevels; ++t) {
    auto y = resample(projections[t]->forward(grids[t]), h8, w8);
    sum = sum.defined() ? sum + y : y;
  }
  auto logits = classifier(fuse2(fuse1(sum)));
  return resample(logits, out_h, out_w);
}

HfitModelImpl::HfitModelImpl(const HfitConfig& config) : config_(config) {
  config_.validate();
  const auto d = config_.backbone.embed_dim;
  backbone = register_module("backbone", VitBackbone(config_.backbone));
  if (config_.freeze_backbone) backbone->freeze();

  // Adapter initialization draws from the global generator.
  torch::manual_seed(config_.seed);
  dspe = register_module("dspe", Dspe(config_.stem, d));
  rhff = register_module("rhff", torch::nn::ModuleList());
  hgfi = register_module("hgfi", torch::nn::ModuleList());
  for (int64_t i = 0; i < config_.backbone.stages; ++i) {
    rhff_stages.emplace_back(config_.rhff, d, config_.num_classes);
    rhff->push_back(rhff_stages.back());
    hgfi_stages.emplace_back(config_.hgfi, d);
    hgfi->push_back(hgfi_stages.back());
  }
  decoder = register_module("decoder", Decoder(d, config_.decoder_channels, config_.num_classes));
}

torch::Tensor HfitModelImpl::forward(const torch::Tensor& rgb, const torch::Tensor& depth3,
                                     ForwardTrace* trace) {
  if (rgb.sizes() != depth3.sizes()) {
    throw ShapeError("rgb " + shape_string(rgb) + " and depth " + shape_string(depth3) +
                     " rasters differ in shape");
  }
  const auto& ab = config_.ablation;
  auto prior = dspe->build_prior(ab.zero_rgb_prior ? torch::zeros_like(rgb) : rgb,
                                 ab.zero_depth_prior ? torch::zeros_like(depth3) : depth3);
  auto x = backbone->patch_embed(rgb);
  if (trace) {
    trace->stages.clear();
    trace->vit_embedded = x.tokens;
  }

  StageHistory vit_history, prior_history;
  for (int64_t i = 0; i < config_.backbone.stages; ++i) {
    auto& rh = rhff_stages[i];
    auto& hg = hgfi_stages[i];
    StageTrace st;
    st.prior_in = prior.tokens;

    st.vit_confidence = rh->vit_confidence(x, prior.levels);
    st.prior_confidence = rh->prior_confidence(prior);
    prior = recalibrate(prior, st.vit_confidence, st.prior_confidence, ab.rgb_weight,
                        ab.depth_weight);
    st.prior_recalibrated = prior.tokens;

    x = rh->inject(x, prior);
    st.vit_injected = x.tokens;
    x = backbone->run_stage(x, i + 1);
    st.vit_stage_out = x.tokens;

    st.vit_gate = hg->vit_gate(x);
    auto vit_integrated = integrate_vit(x, st.vit_gate, vit_history, ab.hgfi_vit);
    vit_history.push(x.tokens, st.vit_gate);
    st.vit_integrated = vit_integrated.tokens;

    st.prior_gate = hg->prior_gate(prior);
    auto prior_integrated = integrate_prior(prior, st.prior_gate, prior_history, ab.hgfi_adapter);
    prior_history.push(prior_integrated.tokens, st.prior_gate);
    st.prior_integrated = prior_integrated.tokens;

    prior = hg->extractor(prior_integrated, vit_integrated);
    st.prior_out = prior.tokens;
    if (trace) trace->stages.push_back(std::move(st));
  }
  if (trace) {
    trace->vit_final = x.tokens;
    trace->prior_final = prior.tokens;
  }
  return decoder(aggregate_outputs(prior, x), rgb.size(2), rgb.size(3));
}

std::vector<std::pair<std::string, torch::Tensor>> HfitModelImpl::trainable_parameters() {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : named_parameters(true)) {
    if (item.value().requires_grad()) out.emplace_back(item.key(), item.value());
  }
  return out;
}

std::map<std::string, ParameterCount> HfitModelImpl::parameter_counts() {
  std::map<std::string, ParameterCount> counts;
  for (const auto& item : named_parameters(true)) {
    const auto& name = item.key();
    auto& c = counts[name.substr(0, name.find('.'))];
    c.total += item.value().numel();
    if (!item.value().requires_grad()) c.frozen += item.value().numel();
  }
  return counts;
}

torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                int64_t ignore_index) {
  if (logits.dim() != 4 || labels.dim() != 3 || logits.size(0) != labels.size(0) ||
      logits.size(2) != labels.size(1) || logits.size(3) != labels.size(2)) {
    throw ShapeError("logits " + shape_string(logits) + " and labels " + shape_string(labels) +
                     " are incompatible");
  }
  const auto classes = logits.size(1);
  auto target = labels.to(torch::kLong);
  auto valid = target != ignore_index;
  auto bad = valid & ((target < 0) | (target >= classes));
  if (bad.any().item<bool>()) {
    const auto v = target.masked_select(bad)[0].item<int64_t>();
    throw ValueError("label " + std::to_string(v) + " outside [0, " + std::to_string(classes) +
                     ") and not the ignore index " + std::to_string(ignore_index));
  }
  if (!valid.any().item<bool>()) {
    std::cerr << "warning: every pixel is ignored; loss set to 0\n";
    return (logits * 0).sum();
  }
  return F::cross_entropy(logits, target,
                          F::CrossEntropyFuncOptions().ignore_index(ignore_index));
}

namespace {

std::vector<std::pair<std::string, torch::Tensor>> state_tensors(HfitModel& model) {
  std::vector<std::pair<std::string, torch::Tensor>> out;
  for (const auto& item : model->named_parameters(true)) out.emplace_back(item.key(), item.value());
  for (const auto& item : model->named_buffers(true)) out.emplace_back(item.key(), item.value());
  return out;
}

}  // namespace

void save_model(HfitModel& model, const std::filesystem::path& path, int64_t iteration) {
  Checkpoint ckpt;
  ckpt.kind = "hfit";
  ckpt.config_yaml = emit_yaml(model->config());
  ckpt.fingerprint = fingerprint(model->config());
  ckpt.iteration = iteration;
  for (auto& [name, t] : state_tensors(model)) {
    ckpt.tensors.push_back({name, t.detach().cpu().clone()});
  }
  write_checkpoint(ckpt, path);
}

void load_model_state(HfitModel& model, const Checkpoint& checkpoint) {
  torch::NoGradGuard no_grad;
  auto tensors = state_tensors(model);
  std::set<std::string> expected;
  for (auto& [name, t] : tensors) {
    expected.insert(name);
    const auto* stored = checkpoint.find(name);
    if (!stored) throw ShapeError("checkpoint lacks tensor '" + name + "'");
    if (stored->sizes() != t.sizes()) {
      throw ShapeError("tensor '" + name + "' has shape " + shape_string(*stored) +
                       " in the checkpoint but " + shape_string(t) + " in the model");
    }
  }
  for (const auto& nt : checkpoint.tensors) {
    if (!expected.count(nt.name)) {
      throw ShapeError("checkpoint tensor '" + nt.name + "' has no counterpart in the model");
    }
  }
  for (auto& [name, t] : tensors) t.copy_(*checkpoint.find(name));
}

LoadedModel load_model(const std::filesystem::path& path) {
  auto ckpt = read_checkpoint(path);
  if (ckpt.kind != "hfit") {
    throw ConfigError("'" + path.string() + "' holds a " + ckpt.kind +
                      " checkpoint, not a full model");
  }
  auto config = hfit_config_from_yaml(ckpt.config_yaml);
  if (fingerprint(config) != ckpt.fingerprint) {
    throw ConfigError("'" + path.string() + "' has a config fingerprint that does not match its "
                      "embedded config");
  }
  LoadedModel out{HfitModel(config), ckpt.iteration};
  load_model_state(out.model, ckpt);
  return out;
}

}  // namespace hfit
