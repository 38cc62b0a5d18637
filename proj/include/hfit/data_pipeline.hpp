#pragma once

// RGB-D samples: directory datasets, the synthetic scene generator, depth
// normalization and training augmentation.
//
// Directory layout:
//   root/rgb/<id>.png      8-bit RGB
//   root/depth/<id>.png    16-bit gray, value v -> v / 65535
//   root/labels/<id>.png   8-bit gray class ids, 255 = ignore
//   root/splits/<split>.txt  one id per line

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace hfit {

struct RGBDSample {
  std::string id;
  torch::Tensor rgb;     // (3, H, W) float32 in [0, 1]
  torch::Tensor depth3;  // (3, H, W) float32 in [0, 1], channels identical
  torch::Tensor labels;  // (H, W) int64
  int64_t height() const { return labels.size(0); }
  int64_t width() const { return labels.size(1); }
};

struct Batch {
  torch::Tensor rgb;     // (B, 3, H, W)
  torch::Tensor depth3;  // (B, 3, H, W)
  torch::Tensor labels;  // (B, H, W)
};
Batch collate(const std::vector<RGBDSample>& samples);

// Min-max normalization of a (H, W) raster replicated to (3, H, W). Constant
// rasters map to zeros. ValueError on non-finite input.
torch::Tensor normalize_depth(const torch::Tensor& raw);

struct DatasetManifest {
  std::filesystem::path root;
  std::string split;
  std::vector<std::string> ids;
};

DatasetManifest read_manifest(const std::filesystem::path& root, const std::string& split);

// Label values found in `remap` are replaced before use.
using LabelRemap = std::map<int64_t, int64_t>;

RGBDSample load_sample(const DatasetManifest& manifest, size_t index,
                       const LabelRemap& remap = {});
std::vector<RGBDSample> load_dataset(const std::filesystem::path& root, const std::string& split,
                                     const LabelRemap& remap = {});

// Writes samples in the directory layout and appends their ids to the split
// file (created if absent).
void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<RGBDSample>& samples);

struct SynthConfig {
  int64_t height = 64;
  int64_t width = 64;
  int64_t classes = 6;
  int64_t min_regions = 3;
  int64_t max_regions = 8;
  int64_t forced_regions = -1;  // >= 0 overrides the random region count
  double min_extent = 0.25;     // region side as a fraction of the image side
  double max_extent = 0.6;
  double color_jitter = 0.08;   // per-region albedo offset
  double pixel_noise = 0.02;    // per-pixel rgb noise std
  double depth_noise = 0.0;     // per-pixel raw depth noise std
  void validate() const;
};

// Rectangles and ellipses over a class-0 background. Each class gets one depth
// per scene; nearer regions are drawn last and occlude farther ones.
RGBDSample synth_scene(uint64_t seed, const SynthConfig& config);

struct AugmentConfig {
  bool enabled = true;
  int64_t crop_size = 448;
  bool flip = true;
  double scale_min = 0.5;
  double scale_max = 2.0;
  double photometric_prob = 0.5;
  double brightness = 0.125;  // additive, +-
  double contrast = 0.5;      // multiplicative range 1 +- contrast
  double saturation = 0.5;
  int64_t ignore_index = 255;
  bool operator==(const AugmentConfig&) const = default;
};

// Shared geometric transform (rescale, pad, crop, flip) on all three rasters,
// labels by nearest neighbour; photometric changes on rgb only.
RGBDSample augment(const RGBDSample& sample, std::mt19937_64& rng, const AugmentConfig& config);

}  // namespace hfit
