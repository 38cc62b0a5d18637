#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace YAML {
class Node;
}

namespace hfit {

struct BackboneConfig {
  int64_t embed_dim = 192;
  int64_t depth = 8;
  int64_t heads = 3;
  int64_t stages = 4;
  double mlp_ratio = 4.0;
  int64_t pos_table_side = 14;
  int64_t patch_size = 16;
  uint64_t seed = 0;

  int64_t layers_per_stage() const { return depth / stages; }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

enum class StemBlock { kPlainConv, kInvertedBottleneck };

struct StemConfig {
  std::array<int64_t, 3> channels = {24, 48, 96};
  StemBlock block = StemBlock::kPlainConv;
  bool shared_branches = false;
  bool projection_bias = true;

  void validate() const;
  bool operator==(const StemConfig&) const = default;
};

struct RhffConfig {
  int64_t kernel = 3;
  int64_t dilation = 2;
  double eps = 1e-6;
  int64_t heads = 3;
  std::string align_mode = "bilinear";

  void validate(int64_t dim) const;
  bool operator==(const RhffConfig&) const = default;
};

struct HgfiConfig {
  std::array<int64_t, 3> gate_kernels = {7, 5, 3};
  double ffn_ratio = 4.0;
  int64_t heads = 3;

  void validate(int64_t dim) const;
  bool operator==(const HgfiConfig&) const = default;
};

// Switches used by the ablation harness. The defaults are the full model.
struct AblationConfig {
  bool zero_rgb_prior = false;    // DSPE rgb branch sees zeros
  bool zero_depth_prior = false;  // DSPE depth branch sees zeros
  bool rgb_weight = true;         // (1 - C_V) factor in the recalibration
  bool depth_weight = true;       // C_S factor in the recalibration
  bool hgfi_vit = true;           // gated integration of ViT features
  bool hgfi_adapter = true;       // gated integration of the spatial prior

  bool operator==(const AblationConfig&) const = default;
};

struct HfitConfig {
  BackboneConfig backbone;
  StemConfig stem;
  RhffConfig rhff;
  HgfiConfig hgfi;
  AblationConfig ablation;
  int64_t num_classes = 19;
  int64_t decoder_channels = 128;
  int64_t crop_size = 448;
  int64_t ignore_index = 255;
  uint64_t seed = 0;
  bool freeze_backbone = true;

  void validate() const;
  bool operator==(const HfitConfig&) const = default;
};

std::string to_string(StemBlock block);
StemBlock parse_stem_block(const std::string& name);

// Strict YAML (de)serialization. Unknown keys raise ConfigError naming the
// full dotted key path.
HfitConfig parse_hfit_config(const YAML::Node& node, const std::string& path = "model");
BackboneConfig parse_backbone_config(const YAML::Node& node, const std::string& path);
std::string emit_yaml(const HfitConfig& config);
std::string emit_yaml(const BackboneConfig& config);
HfitConfig hfit_config_from_yaml(const std::string& text);
BackboneConfig backbone_config_from_yaml(const std::string& text);

// Stable 64-bit fingerprint of the canonical YAML rendering.
uint64_t fingerprint(const HfitConfig& config);


}  // namespace hfit
