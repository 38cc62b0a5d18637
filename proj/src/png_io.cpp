#include "hfit/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <memory>

#include "hfit/errors.hpp"

namespace hfit {

namespace {

struct FileCloser {
  void operator()(FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<FILE, FileCloser>;

}  // namespace

PngImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw IoError("cannot open '" + path.string() + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    throw IoError("'" + path.string() + "' is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("libpng initialization failed");
  }
  PngImage img;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "' could not be decoded");
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.bit_depth = depth;
  bool supported = depth == 8 || depth == 16;
  if (color == PNG_COLOR_TYPE_GRAY) {
    img.channels = 1;
  } else if (color == PNG_COLOR_TYPE_RGB) {
    img.channels = 3;
  } else {
    supported = false;
  }
  if (!supported) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("'" + path.string() + "' has an unsupported PNG layout (color type " +
                  std::to_string(color) + ", " + std::to_string(depth) + " bits)");
  }
  if (depth == 16) png_set_swap(png);
  png_read_update_info(png, info);
  const size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + y * row_bytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  const size_t n = static_cast<size_t>(img.width) * img.height * img.channels;
  img.data.resize(n);
  if (depth == 8) {
    for (size_t i = 0; i < n; ++i) img.data[i] = buffer[i];
  } else {
    const auto* p = reinterpret_cast<const uint16_t*>(buffer.data());
    for (size_t i = 0; i < n; ++i) img.data[i] = p[i];
  }
  return img;
}

void write_png(const std::filesystem::path& path, const PngImage& image) {
  if ((image.channels != 1 && image.channels != 3) ||
      (image.bit_depth != 8 && image.bit_depth != 16) ||
      image.data.size() != static_cast<size_t>(image.width) * image.height * image.channels) {
    throw ValueError("cannot encode a " + std::to_string(image.channels) + "-channel " +
                     std::to_string(image.bit_depth) + "-bit image of " +
                     std::to_string(image.data.size()) + " samples");
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("libpng initialization failed");
  }
  const size_t samples_per_row = static_cast<size_t>(image.width) * image.channels;
  const size_t bytes_per_sample = image.bit_depth / 8;
  std::vector<png_byte> buffer(samples_per_row * bytes_per_sample * image.height);
  for (size_t i = 0; i < image.data.size(); ++i) {
    if (image.bit_depth == 8) {
      buffer[i] = static_cast<png_byte>(image.data[i]);
    } else {
      // PNG stores 16-bit samples big endian.
      buffer[2 * i] = static_cast<png_byte>(image.data[i] >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(image.data[i] & 0xff);
    }
  }
  std::vector<png_bytep> rows(image.height);
  for (int y = 0; y < image.height; ++y) {
    rows[y] = buffer.data() + y * samples_per_row * bytes_per_sample;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("failed writing '" + path.string() + "'");
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, image.width, image.height, image.bit_depth,
               image.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace hfit
