#include "hfit/hash.hpp"

namespace hfit {

uint64_t fnv1a64(const void* data, size_t size, uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ull;
  }
  return h;
}

uint64_t tensor_checksum(const torch::Tensor& t, uint64_t seed) {
  const auto c = t.detach().contiguous();
  return fnv1a64(c.data_ptr(), c.numel() * c.element_size(), seed);
}

}  // namespace hfit
