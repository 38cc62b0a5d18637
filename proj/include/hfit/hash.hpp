#pragma once

#include <torch/torch.h>

#include <cstddef>
#include <cstdint>

namespace hfit {

inline constexpr uint64_t kFnvOffset = 1469598103934665603ull;

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed = kFnvOffset);

// Hash over the raw bytes of a tensor (made contiguous first).
uint64_t tensor_checksum(const torch::Tensor& t, uint64_t seed = kFnvOffset);

}  // namespace hfit
