#include "hfit/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>

#include "hfit/errors.hpp"
#include "hfit/layout.hpp"
#include "hfit/png_io.hpp"

namespace hfit {

namespace F = torch::nn::functional;

Batch collate(const std::vector<RGBDSample>& samples) {
  if (samples.empty()) throw ValueError("cannot collate an empty sample list");
  std::vector<torch::Tensor> rgb, depth, labels;
  for (const auto& s : samples) {
    if (s.labels.sizes() != samples.front().labels.sizes()) {
      throw ShapeError("sample '" + s.id + "' is " + shape_string(s.labels) + ", batch expects " +
                       shape_string(samples.front().labels));
    }
    rgb.push_back(s.rgb);
    depth.push_back(s.depth3);
    labels.push_back(s.labels);
  }
  return {torch::stack(rgb), torch::stack(depth), torch::stack(labels)};
}

torch::Tensor normalize_depth(const torch::Tensor& raw) {
  if (raw.dim() != 2) throw ShapeError("depth raster must be (H, W), got " + shape_string(raw));
  auto d = raw.to(torch::kDouble);
  if (!torch::isfinite(d).all().item<bool>()) throw ValueError("depth raster has non-finite values");
  const double lo = d.min().item<double>();
  const double hi = d.max().item<double>();
  auto out = hi > lo ? (d - lo) / (hi - lo) : torch::zeros_like(d);
  return out.to(torch::kFloat).unsqueeze(0).repeat({3, 1, 1});
}

DatasetManifest read_manifest(const std::filesystem::path& root, const std::string& split) {
  const auto path = root / "splits" / (split + ".txt");
  std::ifstream in(path);
  if (!in) throw IoError("split file '" + path.string() + "' not found");
  DatasetManifest m{root, split, {}};
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) m.ids.push_back(line);
  }
  return m;
}

namespace {

torch::Tensor to_tensor(const PngImage& img) {
  std::vector<int32_t> values(img.data.begin(), img.data.end());
  return torch::from_blob(values.data(), {img.height, img.width, img.channels}, torch::kInt32)
      .clone();
}

void require_layout(const PngImage& img, int channels, int bits, const std::string& what,
                    const std::filesystem::path& path) {
  if (img.channels != channels || img.bit_depth != bits) {
    throw IoError(what + " '" + path.string() + "' must be " + std::to_string(bits) + "-bit " +
                  std::to_string(channels) + "-channel, found " + std::to_string(img.bit_depth) +
                  "-bit " + std::to_string(img.channels) + "-channel");
  }
}

}  // namespace

RGBDSample load_sample(const DatasetManifest& manifest, size_t index, const LabelRemap& remap) {
  const auto& id = manifest.ids.at(index);
  const auto rgb_path = manifest.root / "rgb" / (id + ".png");
  const auto depth_path = manifest.root / "depth" / (id + ".png");
  const auto label_path = manifest.root / "labels" / (id + ".png");
  const std::string triple = "sample '" + id + "' (" + rgb_path.string() + ", " +
                             depth_path.string() + ", " + label_path.string() + ")";
  PngImage rgb, depth, labels;
  try {
    rgb = read_png(rgb_path);
    depth = read_png(depth_path);
    labels = read_png(label_path);
    require_layout(rgb, 3, 8, "rgb", rgb_path);
    require_layout(depth, 1, 16, "depth", depth_path);
    require_layout(labels, 1, 8, "labels", label_path);
  } catch (const IoError& e) {
    throw IoError(triple + ": " + e.what());
  }
  for (const auto* img : {&depth, &labels}) {
    if (img->width != rgb.width || img->height != rgb.height) {
      throw ShapeError(triple + ": raster sizes differ (rgb " + std::to_string(rgb.height) + "x" +
                       std::to_string(rgb.width) + ", depth " + std::to_string(depth.height) +
                       "x" + std::to_string(depth.width) + ", labels " +
                       std::to_string(labels.height) + "x" + std::to_string(labels.width) + ")");
    }
  }
  RGBDSample s;
  s.id = id;
  s.rgb = to_tensor(rgb).permute({2, 0, 1}).to(torch::kFloat).div(255.0).contiguous();
  s.depth3 = normalize_depth(to_tensor(depth).select(2, 0).to(torch::kDouble) / 65535.0);
  auto lab = to_tensor(labels).select(2, 0).to(torch::kLong);
  if (!remap.empty()) {
    auto src = lab.clone();
    for (const auto& [from, to] : remap) lab.masked_fill_(src == from, to);
  }
  s.labels = lab.contiguous();
  return s;
}

std::vector<RGBDSample> load_dataset(const std::filesystem::path& root, const std::string& split,
                                     const LabelRemap& remap) {
  const auto manifest = read_manifest(root, split);
  std::vector<RGBDSample> out;
  out.reserve(manifest.ids.size());
  for (size_t i = 0; i < manifest.ids.size(); ++i) out.push_back(load_sample(manifest, i, remap));
  return out;
}

void write_dataset(const std::filesystem::path& root, const std::string& split,
                   const std::vector<RGBDSample>& samples) {
  for (const auto& s : samples) {
    const int h = static_cast<int>(s.height()), w = static_cast<int>(s.width());
    auto pack = [&](const torch::Tensor& hwc, int channels, int bits) {
      PngImage img{w, h, channels, bits, {}};
      auto v = hwc.to(torch::kInt32).contiguous();
      img.data.assign(v.data_ptr<int32_t>(), v.data_ptr<int32_t>() + v.numel());
      return img;
    };
    auto rgb8 = s.rgb.permute({1, 2, 0}).mul(255.0).round().clamp(0, 255);
    auto depth16 = s.depth3[0].mul(65535.0).round().clamp(0, 65535);
    if ((s.labels < 0).any().item<bool>() || (s.labels > 255).any().item<bool>()) {
      throw ValueError("sample '" + s.id + "' has labels outside the 8-bit range");
    }
    write_png(root / "rgb" / (s.id + ".png"), pack(rgb8, 3, 8));
    write_png(root / "depth" / (s.id + ".png"), pack(depth16, 1, 16));
    write_png(root / "labels" / (s.id + ".png"), pack(s.labels, 1, 8));
  }
  std::filesystem::create_directories(root / "splits");
  std::ofstream out(root / "splits" / (split + ".txt"), std::ios::app);
  if (!out) throw IoError("cannot write split file for '" + split + "'");
  for (const auto& s : samples) out << s.id << '\n';
}

void SynthConfig::validate() const {
  check_input_size(height, width);
  if (classes < 2) throw ConfigError("synthetic scenes need at least 2 classes");
  if (min_regions < 0 || max_regions < min_regions) {
    throw ConfigError("synthetic region count range is empty");
  }
  if (!(min_extent > 0 && max_extent <= 1 && min_extent <= max_extent)) {
    throw ConfigError("synthetic region extents must satisfy 0 < min <= max <= 1");
  }
  if (color_jitter < 0 || pixel_noise < 0 || depth_noise < 0) {
    throw ConfigError("synthetic noise levels must be non-negative");
  }
}

namespace {

std::array<double, 3> class_albedo(int64_t c, int64_t classes) {
  if (c == 0) return {0.5, 0.5, 0.5};
  // Evenly spaced hues at fixed saturation/value.
  const double h = 6.0 * static_cast<double>(c - 1) / static_cast<double>(classes - 1);
  const double s = 0.75, v = 0.9;
  const int sector = static_cast<int>(h) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (sector) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

struct Region {
  int64_t cls;
  bool ellipse;
  double cy, cx, hy, hx;  // centre and half extents in pixels
  std::array<double, 3> albedo;
};

}  // namespace

RGBDSample synth_scene(uint64_t seed, const SynthConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  const int64_t H = config.height, W = config.width, C = config.classes;

  const int64_t count =
      config.forced_regions >= 0
          ? config.forced_regions
          : config.min_regions +
                static_cast<int64_t>(unit(rng) * (config.max_regions - config.min_regions + 1));

  // One depth per class; the background is farthest.
  std::vector<double> class_depth(C, 1.0);
  for (int64_t c = 1; c < C; ++c) class_depth[c] = uniform(0.05, 0.9);

  auto jittered = [&](int64_t cls) {
    auto a = class_albedo(cls, C);
    for (auto& v : a) v += uniform(-config.color_jitter, config.color_jitter);
    return a;
  };
  const auto background = jittered(0);
  std::vector<Region> regions;
  for (int64_t r = 0; r < count; ++r) {
    Region g;
    g.cls = 1 + std::min<int64_t>(C - 2, static_cast<int64_t>(unit(rng) * (C - 1)));
    g.ellipse = unit(rng) < 0.5;
    g.hy = 0.5 * H * uniform(config.min_extent, config.max_extent);
    g.hx = 0.5 * W * uniform(config.min_extent, config.max_extent);
    g.cy = uniform(0.0, static_cast<double>(H));
    g.cx = uniform(0.0, static_cast<double>(W));
    g.albedo = jittered(g.cls);
    regions.push_back(g);
  }
  std::stable_sort(regions.begin(), regions.end(), [&](const Region& a, const Region& b) {
    return class_depth[a.cls] > class_depth[b.cls];
  });

  auto labels = torch::zeros({H, W}, torch::kLong);
  auto raw = torch::full({H, W}, 1.0, torch::kDouble);
  auto rgb = torch::empty({3, H, W}, torch::kDouble);
  auto lab_a = labels.accessor<int64_t, 2>();
  auto raw_a = raw.accessor<double, 2>();
  auto rgb_a = rgb.accessor<double, 3>();
  for (int64_t y = 0; y < H; ++y) {
    for (int64_t x = 0; x < W; ++x) {
      const double py = y + 0.5, px = x + 0.5;
      const Region* top = nullptr;
      for (const auto& g : regions) {
        const double dy = (py - g.cy) / g.hy, dx = (px - g.cx) / g.hx;
        const bool inside = g.ellipse ? dy * dy + dx * dx <= 1.0
                                      : std::abs(dy) <= 1.0 && std::abs(dx) <= 1.0;
        if (inside) top = &g;
      }
      const auto& albedo = top ? top->albedo : background;
      if (top) {
        lab_a[y][x] = top->cls;
        raw_a[y][x] = class_depth[top->cls];
      }
      for (int c = 0; c < 3; ++c) rgb_a[c][y][x] = albedo[c];
    }
  }
  // Noise is drawn after the geometry so its stream never shifts the layout.
  std::normal_distribution<double> gauss(0.0, 1.0);
  if (config.pixel_noise > 0) {
    auto noise = torch::empty_like(rgb);
    auto n_a = noise.accessor<double, 3>();
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) n_a[c][y][x] = config.pixel_noise * gauss(rng);
    rgb += noise;
  }
  if (config.depth_noise > 0) {
    for (int64_t y = 0; y < H; ++y)
      for (int64_t x = 0; x < W; ++x)
        raw_a[y][x] = std::max(0.0, raw_a[y][x] + config.depth_noise * gauss(rng));
  }

  RGBDSample s;
  s.id = "synth_" + std::to_string(seed);
  s.rgb = rgb.clamp(0.0, 1.0).to(torch::kFloat);
  s.depth3 = normalize_depth(raw);
  s.labels = labels;
  return s;
}

RGBDSample augment(const RGBDSample& sample, std::mt19937_64& rng, const AugmentConfig& config) {
  if (!config.enabled) return sample;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  // Draw every random quantity up front so the stream does not depend on
  // which branches fire.
  const double scale = config.scale_min + (config.scale_max - config.scale_min) * unit(rng);
  const double crop_y = unit(rng), crop_x = unit(rng);
  const bool flip = config.flip && unit(rng) < 0.5;
  const bool do_bright = unit(rng) < config.photometric_prob;
  const double bright = (2 * unit(rng) - 1) * config.brightness;
  const bool do_contrast = unit(rng) < config.photometric_prob;
  const double contrast = 1 + (2 * unit(rng) - 1) * config.contrast;
  const bool do_sat = unit(rng) < config.photometric_prob;
  const double sat = 1 + (2 * unit(rng) - 1) * config.saturation;

  auto rgb = sample.rgb.unsqueeze(0);
  auto depth = sample.depth3.unsqueeze(0);
  auto labels = sample.labels.unsqueeze(0).unsqueeze(0).to(torch::kFloat);
  const int64_t h = std::max<int64_t>(1, std::llround(sample.height() * scale));
  const int64_t w = std::max<int64_t>(1, std::llround(sample.width() * scale));
  if (h != sample.height() || w != sample.width()) {
    rgb = resample(rgb, h, w, ResampleMode::kBilinear);
    depth = resample(depth, h, w, ResampleMode::kBilinear);
    labels = resample(labels, h, w, ResampleMode::kNearest);
  }
  const int64_t crop = config.crop_size;
  const int64_t pad_h = std::max<int64_t>(0, crop - h), pad_w = std::max<int64_t>(0, crop - w);
  if (pad_h > 0 || pad_w > 0) {
    const std::vector<int64_t> pad = {0, pad_w, 0, pad_h};
    rgb = F::pad(rgb, F::PadFuncOptions(pad).value(0.0));
    depth = F::pad(depth, F::PadFuncOptions(pad).value(0.0));
    labels = F::pad(labels, F::PadFuncOptions(pad).value(static_cast<double>(config.ignore_index)));
  }
  const int64_t y0 = std::min<int64_t>(rgb.size(2) - crop,
                                       static_cast<int64_t>(crop_y * (rgb.size(2) - crop + 1)));
  const int64_t x0 = std::min<int64_t>(rgb.size(3) - crop,
                                       static_cast<int64_t>(crop_x * (rgb.size(3) - crop + 1)));
  auto cut = [&](const torch::Tensor& t) {
    return t.slice(2, y0, y0 + crop).slice(3, x0, x0 + crop);
  };
  rgb = cut(rgb);
  depth = cut(depth);
  labels = cut(labels);
  if (flip) {
    rgb = rgb.flip({3});
    depth = depth.flip({3});
    labels = labels.flip({3});
  }

  if (do_bright) rgb = (rgb + bright).clamp(0.0, 1.0);
  if (do_contrast) rgb = ((rgb - rgb.mean()) * contrast + rgb.mean()).clamp(0.0, 1.0);
  if (do_sat) {
    auto gray = rgb.mean(1, true);
    rgb = ((rgb - gray) * sat + gray).clamp(0.0, 1.0);
  }

  RGBDSample out;
  out.id = sample.id;
  out.rgb = rgb.squeeze(0).contiguous();
  out.depth3 = depth.squeeze(0).contiguous();
  out.labels = labels.squeeze(0).squeeze(0).to(torch::kLong).contiguous();
  return out;
}

}  // namespace hfit
