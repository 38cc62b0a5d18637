#pragma once

// Full model: frozen ViT, spatial prior extractor, N interaction stages, and a
// sum-fusion segmentation decoder.
//
// Per stage i (x is the ViT token trajectory, P the spatial prior):
//   C_V, C_S   = confidences of x and P
//   P          = recalibrate(P, C_V, C_S)
//   x          = x + gamma_i * MHA(LN(x), LN(P))
//   F          = run_stage(x, i)
//   V          = integrate(F, vit_gate(F), ViT history)
//   Q          = integrate(P, prior_gate(P), prior history)
//   P          = extract(Q, V)
//   x          = F
// The trajectory only ever changes through the gamma-scaled injection, so with
// every gamma at zero it is exactly the plain ViT forward. The gated ViT
// integration V feeds the extractor and the ViT history.

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hfit/checkpoint.hpp"
#include "hfit/config.hpp"
#include "hfit/dspe.hpp"
#include "hfit/hgfi.hpp"
#include "hfit/layout.hpp"
#include "hfit/nn_blocks.hpp"
#include "hfit/rhff.hpp"
#include "hfit/vit_backbone.hpp"

namespace hfit {

struct StageTrace {
  torch::Tensor vit_confidence;    // (B, T, 1)
  torch::Tensor prior_confidence;  // (B, T, 1)
  torch::Tensor prior_in;          // prior tokens before recalibration
  torch::Tensor prior_recalibrated;
  torch::Tensor vit_injected;      // trajectory after injection
  torch::Tensor vit_stage_out;     // run_stage output
  torch::Tensor vit_gate;
  torch::Tensor vit_integrated;
  torch::Tensor prior_gate;
  torch::Tensor prior_integrated;
  torch::Tensor prior_out;         // extractor output
};

struct ForwardTrace {
  torch::Tensor vit_embedded;  // patch embedding + positions
  std::vector<StageTrace> stages;
  torch::Tensor vit_final;     // trajectory entering aggregation
  torch::Tensor prior_final;
};

// Prior levels as grids with the ViT grid added into the stride-16 level.
LevelGrids aggregate_outputs(const TokenPyramid& prior, const ViTTokens& vit);

class DecoderImpl : public torch::nn::Module {
 public:
  DecoderImpl(int64_t dim, int64_t channels, int64_t classes);
  // Level grids -> (B, C, out_h, out_w) logits.
  torch::Tensor forward(const LevelGrids& grids, int64_t out_h, int64_t out_w);

  std::array<torch::nn::Conv2d, kNumLevels> projections{nullptr, nullptr, nullptr};
  ConvNormAct fuse1{nullptr}, fuse2{nullptr};
  torch::nn::Conv2d classifier{nullptr};
};
TORCH_MODULE(Decoder);

struct ParameterCount {
  int64_t total = 0;
  int64_t frozen = 0;
  int64_t trainable() const { return total - frozen; }
};

class HfitModelImpl : public torch::nn::Module {
 public:
  explicit HfitModelImpl(const HfitConfig& config);

  // rgb, depth3: (B, 3, H, W). Returns (B, C, H, W) logits.
  torch::Tensor forward(const torch::Tensor& rgb, const torch::Tensor& depth3,
                        ForwardTrace* trace = nullptr);

  // Named parameters that receive optimizer updates.
  std::vector<std::pair<std::string, torch::Tensor>> trainable_parameters();

  // Counts keyed by top-level module (backbone, dspe, rhff, hgfi, decoder).
  std::map<std::string, ParameterCount> parameter_counts();

  const HfitConfig& config() const { return config_; }
  // Ablation switches may change after construction; they hold no parameters.
  void set_ablation(const AblationConfig& ablation) { config_.ablation = ablation; }

  VitBackbone backbone{nullptr};
  Dspe dspe{nullptr};
  torch::nn::ModuleList rhff{nullptr}, hgfi{nullptr};
  std::vector<RhffStage> rhff_stages;
  std::vector<HgfiStage> hgfi_stages;
  Decoder decoder{nullptr};

 private:
  HfitConfig config_;
};
TORCH_MODULE(HfitModel);

// Mean pixel cross-entropy over labels != ignore_index. labels: (B, H, W)
// int64. Returns 0 with a warning on stderr when every pixel is ignored;
// ValueError for labels outside [0, C).
torch::Tensor segmentation_loss(const torch::Tensor& logits, const torch::Tensor& labels,
                                int64_t ignore_index = 255);

void save_model(HfitModel& model, const std::filesystem::path& path, int64_t iteration);

struct LoadedModel {
  HfitModel model{nullptr};
  int64_t iteration = 0;
};
LoadedModel load_model(const std::filesystem::path& path);

// Copies every parameter and buffer of `model` from the checkpoint. ShapeError
// on the first missing or mismatching tensor.
void load_model_state(HfitModel& model, const Checkpoint& checkpoint);

}  // namespace hfit
