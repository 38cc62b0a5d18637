#pragma once

// Binary parameter store keyed by hierarchical parameter names.
//
// Layout (little endian):
//   "HFITCKPT" u32 version
//   str kind, str config_yaml, u64 fingerprint, i64 iteration
//   u64 count, then per tensor: str name, u8 dtype, u32 ndim, i64 dims[ndim], raw bytes
// where str = u64 length + bytes. dtype: 0 float32, 1 float64, 2 int64.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hfit {

struct NamedTensor {
  std::string name;
  torch::Tensor value;
};

struct Checkpoint {
  std::string kind;         // "hfit" or "backbone"
  std::string config_yaml;  // embedded model (or backbone) config
  uint64_t fingerprint = 0;
  int64_t iteration = 0;
  std::vector<NamedTensor> tensors;

  const torch::Tensor* find(const std::string& name) const;
};

void write_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace hfit
