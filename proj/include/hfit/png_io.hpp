#pragma once

// Minimal PNG reading/writing for the dataset formats: 8-bit RGB, 8-bit gray,
// 16-bit gray. Samples are stored row-major, interleaved, in host order.

#include <cstdint>
#include <filesystem>
#include <vector>

namespace hfit {

struct PngImage {
  int width = 0;
  int height = 0;
  int channels = 0;   // 1 or 3
  int bit_depth = 0;  // 8 or 16
  std::vector<uint16_t> data;

  uint16_t at(int y, int x, int c = 0) const {
    return data[(static_cast<size_t>(y) * width + x) * channels + c];
  }
};

// IoError on missing or undecodable files and on any layout other than
// gray/RGB at 8 or 16 bits (palette and alpha images are rejected).
PngImage read_png(const std::filesystem::path& path);

void write_png(const std::filesystem::path& path, const PngImage& image);

}  // namespace hfit
