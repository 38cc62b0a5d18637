#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <random>
#include <string>

#include "hfit/config.hpp"

namespace hfit::testing {

// Removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() / ("hfit_test_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// D=8, L=2, N=2, C=3; small enough for float64 and finite differences.
inline HfitConfig tiny_config() {
  HfitConfig c;
  c.backbone.embed_dim = 8;
  c.backbone.depth = 2;
  c.backbone.heads = 2;
  c.backbone.stages = 2;
  c.backbone.mlp_ratio = 2.0;
  c.backbone.pos_table_side = 4;
  c.stem.channels = {4, 8, 8};
  c.rhff.heads = 2;
  c.hgfi.heads = 2;
  c.hgfi.ffn_ratio = 2.0;
  c.num_classes = 3;
  c.decoder_channels = 8;
  c.crop_size = 32;
  return c;
}

// D=192, L=8, N=4, C=6 at 64x64.
inline HfitConfig desk_config() {
  HfitConfig c;
  c.num_classes = 6;
  c.crop_size = 64;
  return c;
}

inline torch::Tensor uniform(std::vector<int64_t> shape, uint64_t seed,
                             torch::Dtype dtype = torch::kFloat) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand(shape, gen, torch::TensorOptions().dtype(dtype));
}

inline torch::Tensor normal(std::vector<int64_t> shape, uint64_t seed,
                            torch::Dtype dtype = torch::kFloat) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn(shape, gen, torch::TensorOptions().dtype(dtype));
}

}  // namespace hfit::testing
