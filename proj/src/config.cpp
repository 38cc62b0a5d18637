#include "hfit/config.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <sstream>

#include "hfit/errors.hpp"
#include "hfit/hash.hpp"
#include "hfit/yaml_schema.hpp"

namespace hfit {

namespace yaml_schema {

void require_map(const YAML::Node& node, const std::string& path) {
  if (!node.IsMap()) throw ConfigError("'" + path + "' must be a mapping");
}

void reject_unknown(const YAML::Node& node, const std::string& path,
                    const std::vector<std::string>& known) {
  require_map(node, path);
  for (const auto& kv : node) {
    const auto key = kv.first.as<std::string>();
    if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ConfigError("unknown key '" + path + "." + key + "'");
    }
  }
}

void read_triple(const YAML::Node& node, const char* key, std::array<int64_t, 3>& out,
                 const std::string& path) {
  const auto child = node[key];
  if (!child) return;
  if (!child.IsSequence() || child.size() != 3) {
    throw ConfigError("'" + path + "." + key + "' must be a list of 3 integers");
  }
  for (size_t i = 0; i < 3; ++i) {
    try {
      out[i] = child[i].as<int64_t>();
    } catch (const YAML::Exception&) {
      throw ConfigError("'" + path + "." + key + "' must be a list of 3 integers");
    }
  }
}

}  // namespace yaml_schema

using yaml_schema::read;
using yaml_schema::read_triple;
using yaml_schema::reject_unknown;

void BackboneConfig::validate() const {
  if (embed_dim <= 0 || depth <= 0 || heads <= 0 || stages <= 0) {
    throw ConfigError("backbone dimensions must be positive");
  }
  if (depth % stages != 0) {
    throw ConfigError("backbone depth " + std::to_string(depth) + " is not divisible by " +
                      std::to_string(stages) + " stages");
  }
  if (embed_dim % heads != 0) {
    throw ConfigError("backbone embed_dim " + std::to_string(embed_dim) +
                      " is not divisible by " + std::to_string(heads) + " heads");
  }
  if (patch_size != 16) throw ConfigError("backbone patch_size must be 16");
  if (mlp_ratio <= 0.0) throw ConfigError("backbone mlp_ratio must be positive");
  if (pos_table_side <= 0) throw ConfigError("backbone pos_table_side must be positive");
}

void StemConfig::validate() const {
  for (auto c : channels) {
    if (c <= 0) throw ConfigError("stem channels must be positive");
  }
}

void RhffConfig::validate(int64_t dim) const {
  if (kernel <= 0 || kernel % 2 == 0) throw ConfigError("rhff.kernel must be a positive odd integer");
  if (dilation <= 0) throw ConfigError("rhff.dilation must be positive");
  if (!(eps > 0.0)) throw ConfigError("rhff.eps must be > 0");
  if (heads <= 0 || dim % heads != 0) throw ConfigError("rhff.heads must divide embed_dim");
  if (align_mode != "bilinear" && align_mode != "nearest") {
    throw ConfigError("rhff.align_mode must be bilinear or nearest");
  }
}

void HgfiConfig::validate(int64_t dim) const {
  for (auto k : gate_kernels) {
    if (k <= 0 || k % 2 == 0) throw ConfigError("hgfi.gate_kernels must be positive odd integers");
  }
  if (ffn_ratio <= 0.0) throw ConfigError("hgfi.ffn_ratio must be positive");
  if (heads <= 0 || dim % heads != 0) throw ConfigError("hgfi.heads must divide embed_dim");
}

void HfitConfig::validate() const {
  backbone.validate();
  stem.validate();
  rhff.validate(backbone.embed_dim);
  hgfi.validate(backbone.embed_dim);
  if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
  if (num_classes > 255) throw ConfigError("num_classes must fit 8-bit label rasters");
  if (decoder_channels <= 0) throw ConfigError("decoder_channels must be positive");
  if (crop_size <= 0 || crop_size % 32 != 0) {
    throw ConfigError("crop_size " + std::to_string(crop_size) + " is not a multiple of 32");
  }
  if (ignore_index >= 0 && ignore_index < num_classes) {
    throw ConfigError("ignore_index collides with a class id");
  }
}

std::string to_string(StemBlock block) {
  return block == StemBlock::kPlainConv ? "plain-conv" : "inverted-bottleneck";
}

StemBlock parse_stem_block(const std::string& name) {
  if (name == "plain-conv") return StemBlock::kPlainConv;
  if (name == "inverted-bottleneck") return StemBlock::kInvertedBottleneck;
  throw ConfigError("unknown stem block '" + name + "' (expected plain-conv|inverted-bottleneck)");
}

BackboneConfig parse_backbone_config(const YAML::Node& node, const std::string& path) {
  reject_unknown(node, path,
                 {"embed_dim", "depth", "heads", "stages", "mlp_ratio", "pos_table_side",
                  "patch_size", "seed"});
  BackboneConfig c;
  read(node, "embed_dim", c.embed_dim, path);
  read(node, "depth", c.depth, path);
  read(node, "heads", c.heads, path);
  read(node, "stages", c.stages, path);
  read(node, "mlp_ratio", c.mlp_ratio, path);
  read(node, "pos_table_side", c.pos_table_side, path);
  read(node, "patch_size", c.patch_size, path);
  read(node, "seed", c.seed, path);
  return c;
}

HfitConfig parse_hfit_config(const YAML::Node& node, const std::string& path) {
  reject_unknown(node, path,
                 {"backbone", "stem", "rhff", "hgfi", "ablation", "num_classes",
                  "decoder_channels", "crop_size", "ignore_index", "seed", "freeze_backbone"});
  HfitConfig c;
  if (node["backbone"]) c.backbone = parse_backbone_config(node["backbone"], path + ".backbone");
  if (const auto s = node["stem"]) {
    const auto p = path + ".stem";
    reject_unknown(s, p, {"channels", "block", "shared_branches", "projection_bias"});
    read_triple(s, "channels", c.stem.channels, p);
    std::string block = to_string(c.stem.block);
    read(s, "block", block, p);
    c.stem.block = parse_stem_block(block);
    read(s, "shared_branches", c.stem.shared_branches, p);
    read(s, "projection_bias", c.stem.projection_bias, p);
  }
  if (const auto r = node["rhff"]) {
    const auto p = path + ".rhff";
    reject_unknown(r, p, {"kernel", "dilation", "eps", "heads", "align_mode"});
    read(r, "kernel", c.rhff.kernel, p);
    read(r, "dilation", c.rhff.dilation, p);
    read(r, "eps", c.rhff.eps, p);
    read(r, "heads", c.rhff.heads, p);
    read(r, "align_mode", c.rhff.align_mode, p);
  }
  if (const auto h = node["hgfi"]) {
    const auto p = path + ".hgfi";
    reject_unknown(h, p, {"gate_kernels", "ffn_ratio", "heads"});
    read_triple(h, "gate_kernels", c.hgfi.gate_kernels, p);
    read(h, "ffn_ratio", c.hgfi.ffn_ratio, p);
    read(h, "heads", c.hgfi.heads, p);
  }
  if (const auto a = node["ablation"]) {
    const auto p = path + ".ablation";
    reject_unknown(a, p,
                   {"zero_rgb_prior", "zero_depth_prior", "rgb_weight", "depth_weight",
                    "hgfi_vit", "hgfi_adapter"});
    read(a, "zero_rgb_prior", c.ablation.zero_rgb_prior, p);
    read(a, "zero_depth_prior", c.ablation.zero_depth_prior, p);
    read(a, "rgb_weight", c.ablation.rgb_weight, p);
    read(a, "depth_weight", c.ablation.depth_weight, p);
    read(a, "hgfi_vit", c.ablation.hgfi_vit, p);
    read(a, "hgfi_adapter", c.ablation.hgfi_adapter, p);
  }
  read(node, "num_classes", c.num_classes, path);
  read(node, "decoder_channels", c.decoder_channels, path);
  read(node, "crop_size", c.crop_size, path);
  read(node, "ignore_index", c.ignore_index, path);
  read(node, "seed", c.seed, path);
  read(node, "freeze_backbone", c.freeze_backbone, path);
  return c;
}

namespace {

void emit_backbone(YAML::Emitter& out, const BackboneConfig& b) {
  out << YAML::BeginMap;
  out << YAML::Key << "embed_dim" << YAML::Value << b.embed_dim;
  out << YAML::Key << "depth" << YAML::Value << b.depth;
  out << YAML::Key << "heads" << YAML::Value << b.heads;
  out << YAML::Key << "stages" << YAML::Value << b.stages;
  out << YAML::Key << "mlp_ratio" << YAML::Value << b.mlp_ratio;
  out << YAML::Key << "pos_table_side" << YAML::Value << b.pos_table_side;
  out << YAML::Key << "patch_size" << YAML::Value << b.patch_size;
  out << YAML::Key << "seed" << YAML::Value << b.seed;
  out << YAML::EndMap;
}

void emit_triple(YAML::Emitter& out, const std::array<int64_t, 3>& v) {
  out << YAML::Flow << YAML::BeginSeq << v[0] << v[1] << v[2] << YAML::EndSeq;
}

}  // namespace

std::string emit_yaml(const BackboneConfig& config) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  emit_backbone(out, config);
  return out.c_str();
}

std::string emit_yaml(const HfitConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "backbone" << YAML::Value;
  emit_backbone(out, c.backbone);
  out << YAML::Key << "stem" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "channels" << YAML::Value;
  emit_triple(out, c.stem.channels);
  out << YAML::Key << "block" << YAML::Value << to_string(c.stem.block);
  out << YAML::Key << "shared_branches" << YAML::Value << c.stem.shared_branches;
  out << YAML::Key << "projection_bias" << YAML::Value << c.stem.projection_bias;
  out << YAML::EndMap;
  out << YAML::Key << "rhff" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "kernel" << YAML::Value << c.rhff.kernel;
  out << YAML::Key << "dilation" << YAML::Value << c.rhff.dilation;
  out << YAML::Key << "eps" << YAML::Value << c.rhff.eps;
  out << YAML::Key << "heads" << YAML::Value << c.rhff.heads;
  out << YAML::Key << "align_mode" << YAML::Value << c.rhff.align_mode;
  out << YAML::EndMap;
  out << YAML::Key << "hgfi" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "gate_kernels" << YAML::Value;
  emit_triple(out, c.hgfi.gate_kernels);
  out << YAML::Key << "ffn_ratio" << YAML::Value << c.hgfi.ffn_ratio;
  out << YAML::Key << "heads" << YAML::Value << c.hgfi.heads;
  out << YAML::EndMap;
  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "zero_rgb_prior" << YAML::Value << c.ablation.zero_rgb_prior;
  out << YAML::Key << "zero_depth_prior" << YAML::Value << c.ablation.zero_depth_prior;
  out << YAML::Key << "rgb_weight" << YAML::Value << c.ablation.rgb_weight;
  out << YAML::Key << "depth_weight" << YAML::Value << c.ablation.depth_weight;
  out << YAML::Key << "hgfi_vit" << YAML::Value << c.ablation.hgfi_vit;
  out << YAML::Key << "hgfi_adapter" << YAML::Value << c.ablation.hgfi_adapter;
  out << YAML::EndMap;
  out << YAML::Key << "num_classes" << YAML::Value << c.num_classes;
  out << YAML::Key << "decoder_channels" << YAML::Value << c.decoder_channels;
  out << YAML::Key << "crop_size" << YAML::Value << c.crop_size;
  out << YAML::Key << "ignore_index" << YAML::Value << c.ignore_index;
  out << YAML::Key << "seed" << YAML::Value << c.seed;
  out << YAML::Key << "freeze_backbone" << YAML::Value << c.freeze_backbone;
  out << YAML::EndMap;
  return out.c_str();
}

HfitConfig hfit_config_from_yaml(const std::string& text) {
  try {
    return parse_hfit_config(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed model config: ") + e.what());
  }
}

BackboneConfig backbone_config_from_yaml(const std::string& text) {
  try {
    return parse_backbone_config(YAML::Load(text), "backbone");
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed backbone config: ") + e.what());
  }
}

uint64_t fingerprint(const HfitConfig& config) {
  const auto text = emit_yaml(config);
  return fnv1a64(text.data(), text.size());
}

}  // namespace hfit
