#include "hfit/cli.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

#include "hfit/checkpoint.hpp"
#include "hfit/errors.hpp"
#include "hfit/png_io.hpp"
#include "hfit/yaml_schema.hpp"

namespace hfit {

namespace fs = std::filesystem;
using yaml_schema::read;
using yaml_schema::reject_unknown;

namespace {

// Nearest existing ancestor must be a writable directory.
bool writable_target(const fs::path& dir) {
  fs::path p = fs::absolute(dir);
  while (!fs::exists(p)) {
    if (!p.has_parent_path() || p.parent_path() == p) return false;
    p = p.parent_path();
  }
  return fs::is_directory(p) && ::access(p.c_str(), W_OK) == 0;
}

void require_split(const RunConfig& c, const std::string& split) {
  const auto path = c.data.root / "splits" / (split + ".txt");
  if (!fs::exists(path)) throw IoError("split file '" + path.string() + "' not found");
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (data.source == "synthetic") {
    auto s = data.synth;
    s.classes = model.num_classes;
    s.validate();
    if (data.train_samples < 1) throw ConfigError("data.train_samples must be >= 1");
    if (data.eval_samples < 0) throw ConfigError("data.eval_samples must be >= 0");
  } else if (data.source == "directory") {
    if (data.root.empty()) throw ConfigError("data.root is required for directory datasets");
    if (!fs::is_directory(data.root)) {
      throw IoError("dataset root '" + data.root.string() + "' is not a directory");
    }
  } else {
    throw ConfigError("data.source must be synthetic or directory, got '" + data.source + "'");
  }
  for (const auto& [from, to] : data.label_remap) {
    if (from < 0 || from > 255 || to < 0 || (to >= model.num_classes && to != model.ignore_index)) {
      throw ConfigError("data.label_remap entry " + std::to_string(from) + " -> " +
                        std::to_string(to) + " is out of range");
    }
  }
  const auto& a = data.augment;
  if (!(a.scale_min > 0 && a.scale_max >= a.scale_min)) {
    throw ConfigError("data.augment scale range must satisfy 0 < scale_min <= scale_max");
  }
  if (a.photometric_prob < 0 || a.photometric_prob > 1) {
    throw ConfigError("data.augment.photometric_prob must lie in [0, 1]");
  }
  if (a.brightness < 0 || a.contrast < 0 || a.saturation < 0) {
    throw ConfigError("data.augment magnitudes must be non-negative");
  }
  const auto& t = train;
  if (t.iterations < 1) throw ConfigError("train.iterations must be >= 1");
  if (t.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(t.lr > 0)) throw ConfigError("train.lr must be > 0");
  if (t.weight_decay < 0) throw ConfigError("train.weight_decay must be >= 0");
  if (t.warmup < 0) throw ConfigError("train.warmup must be >= 0");
  if (t.schedule != "constant" && t.schedule != "poly") {
    throw ConfigError("train.schedule must be constant or poly, got '" + t.schedule + "'");
  }
  if (t.checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  if (t.log_every < 0) throw ConfigError("train.log_every must be >= 0");
  if (eval_shards < 1) throw ConfigError("eval.shards must be >= 1");
  if (ablation_runs < 1) throw ConfigError("ablation.runs must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must be set");
  if (!writable_target(output_dir)) {
    throw IoError("output directory '" + output_dir.string() + "' is not writable");
  }
}

RunConfig parse_run_config(const std::string& yaml_text) {
  YAML::Node root;
  try {
    root = YAML::Load(yaml_text);
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  if (!root || root.IsNull()) throw ConfigError("config is empty");
  reject_unknown(root, "config", {"model", "data", "train", "eval", "ablation", "output_dir"});
  RunConfig c;
  try {
    if (root["model"]) c.model = parse_hfit_config(root["model"], "model");
    if (const auto d = root["data"]) {
      reject_unknown(d, "data",
                     {"source", "root", "train_split", "eval_split", "synthetic", "train_seed",
                      "train_samples", "eval_seed", "eval_samples", "label_remap", "augment"});
      read(d, "source", c.data.source, "data");
      std::string root_dir;
      read(d, "root", root_dir, "data");
      c.data.root = root_dir;
      read(d, "train_split", c.data.train_split, "data");
      read(d, "eval_split", c.data.eval_split, "data");
      read(d, "train_seed", c.data.train_seed, "data");
      read(d, "train_samples", c.data.train_samples, "data");
      read(d, "eval_seed", c.data.eval_seed, "data");
      read(d, "eval_samples", c.data.eval_samples, "data");
      if (const auto s = d["synthetic"]) {
        const std::string p = "data.synthetic";
        reject_unknown(s, p,
                       {"height", "width", "min_regions", "max_regions", "min_extent",
                        "max_extent", "color_jitter", "pixel_noise", "depth_noise"});
        auto& sc = c.data.synth;
        read(s, "height", sc.height, p);
        read(s, "width", sc.width, p);
        read(s, "min_regions", sc.min_regions, p);
        read(s, "max_regions", sc.max_regions, p);
        read(s, "min_extent", sc.min_extent, p);
        read(s, "max_extent", sc.max_extent, p);
        read(s, "color_jitter", sc.color_jitter, p);
        read(s, "pixel_noise", sc.pixel_noise, p);
        read(s, "depth_noise", sc.depth_noise, p);
      }
      if (const auto r = d["label_remap"]) {
        yaml_schema::require_map(r, "data.label_remap");
        for (const auto& kv : r) {
          try {
            c.data.label_remap[kv.first.as<int64_t>()] = kv.second.as<int64_t>();
          } catch (const YAML::Exception&) {
            throw ConfigError("'data.label_remap' entries must map integers to integers");
          }
        }
      }
      if (const auto a = d["augment"]) {
        const std::string p = "data.augment";
        reject_unknown(a, p,
                       {"enabled", "flip", "scale_min", "scale_max", "photometric_prob",
                        "brightness", "contrast", "saturation"});
        auto& ac = c.data.augment;
        read(a, "enabled", ac.enabled, p);
        read(a, "flip", ac.flip, p);
        read(a, "scale_min", ac.scale_min, p);
        read(a, "scale_max", ac.scale_max, p);
        read(a, "photometric_prob", ac.photometric_prob, p);
        read(a, "brightness", ac.brightness, p);
        read(a, "contrast", ac.contrast, p);
        read(a, "saturation", ac.saturation, p);
      }
    }
    if (const auto t = root["train"]) {
      const std::string p = "train";
      reject_unknown(t, p,
                     {"iterations", "batch_size", "lr", "weight_decay", "warmup", "schedule",
                      "checkpoint_every", "data_seed", "log_every"});
      read(t, "iterations", c.train.iterations, p);
      read(t, "batch_size", c.train.batch_size, p);
      read(t, "lr", c.train.lr, p);
      read(t, "weight_decay", c.train.weight_decay, p);
      read(t, "warmup", c.train.warmup, p);
      read(t, "schedule", c.train.schedule, p);
      read(t, "checkpoint_every", c.train.checkpoint_every, p);
      read(t, "data_seed", c.train.data_seed, p);
      read(t, "log_every", c.train.log_every, p);
    }
    if (const auto e = root["eval"]) {
      reject_unknown(e, "eval", {"shards"});
      read(e, "shards", c.eval_shards, "eval");
    }
    if (const auto a = root["ablation"]) {
      reject_unknown(a, "ablation", {"runs"});
      read(a, "runs", c.ablation_runs, "ablation");
    }
    std::string out_dir = c.output_dir.string();
    read(root, "output_dir", out_dir, "config");
    c.output_dir = out_dir;
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  c.data.synth.classes = c.model.num_classes;
  c.data.augment.crop_size = c.model.crop_size;
  c.data.augment.ignore_index = c.model.ignore_index;
  return c;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("config file '" + path.string() + "' not found");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string emit_yaml(const RunConfig& c) {
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "model" << YAML::Value << YAML::Load(emit_yaml(c.model));
  out << YAML::Key << "data" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "source" << YAML::Value << c.data.source;
  out << YAML::Key << "root" << YAML::Value << c.data.root.string();
  out << YAML::Key << "train_split" << YAML::Value << c.data.train_split;
  out << YAML::Key << "eval_split" << YAML::Value << c.data.eval_split;
  const auto& s = c.data.synth;
  out << YAML::Key << "synthetic" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "height" << YAML::Value << s.height;
  out << YAML::Key << "width" << YAML::Value << s.width;
  out << YAML::Key << "min_regions" << YAML::Value << s.min_regions;
  out << YAML::Key << "max_regions" << YAML::Value << s.max_regions;
  out << YAML::Key << "min_extent" << YAML::Value << s.min_extent;
  out << YAML::Key << "max_extent" << YAML::Value << s.max_extent;
  out << YAML::Key << "color_jitter" << YAML::Value << s.color_jitter;
  out << YAML::Key << "pixel_noise" << YAML::Value << s.pixel_noise;
  out << YAML::Key << "depth_noise" << YAML::Value << s.depth_noise;
  out << YAML::EndMap;
  out << YAML::Key << "train_seed" << YAML::Value << c.data.train_seed;
  out << YAML::Key << "train_samples" << YAML::Value << c.data.train_samples;
  out << YAML::Key << "eval_seed" << YAML::Value << c.data.eval_seed;
  out << YAML::Key << "eval_samples" << YAML::Value << c.data.eval_samples;
  out << YAML::Key << "label_remap" << YAML::Value << YAML::BeginMap;
  for (const auto& [from, to] : c.data.label_remap) out << YAML::Key << from << YAML::Value << to;
  out << YAML::EndMap;
  const auto& a = c.data.augment;
  out << YAML::Key << "augment" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "enabled" << YAML::Value << a.enabled;
  out << YAML::Key << "flip" << YAML::Value << a.flip;
  out << YAML::Key << "scale_min" << YAML::Value << a.scale_min;
  out << YAML::Key << "scale_max" << YAML::Value << a.scale_max;
  out << YAML::Key << "photometric_prob" << YAML::Value << a.photometric_prob;
  out << YAML::Key << "brightness" << YAML::Value << a.brightness;
  out << YAML::Key << "contrast" << YAML::Value << a.contrast;
  out << YAML::Key << "saturation" << YAML::Value << a.saturation;
  out << YAML::EndMap;
  out << YAML::EndMap;
  const auto& t = c.train;
  out << YAML::Key << "train" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "iterations" << YAML::Value << t.iterations;
  out << YAML::Key << "batch_size" << YAML::Value << t.batch_size;
  out << YAML::Key << "lr" << YAML::Value << t.lr;
  out << YAML::Key << "weight_decay" << YAML::Value << t.weight_decay;
  out << YAML::Key << "warmup" << YAML::Value << t.warmup;
  out << YAML::Key << "schedule" << YAML::Value << t.schedule;
  out << YAML::Key << "checkpoint_every" << YAML::Value << t.checkpoint_every;
  out << YAML::Key << "data_seed" << YAML::Value << t.data_seed;
  out << YAML::Key << "log_every" << YAML::Value << t.log_every;
  out << YAML::EndMap;
  out << YAML::Key << "eval" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "shards" << YAML::Value << c.eval_shards << YAML::EndMap;
  out << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "runs" << YAML::Value << c.ablation_runs << YAML::EndMap;
  out << YAML::Key << "output_dir" << YAML::Value << c.output_dir.string();
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

namespace {

std::vector<RGBDSample> synthetic_samples(const RunConfig& c, uint64_t seed, int64_t count) {
  auto sc = c.data.synth;
  sc.classes = c.model.num_classes;
  std::vector<RGBDSample> out;
  for (int64_t i = 0; i < count; ++i) out.push_back(synth_scene(seed + i, sc));
  return out;
}

}  // namespace

std::vector<RGBDSample> training_samples(const RunConfig& c) {
  if (c.data.source == "synthetic") {
    return synthetic_samples(c, c.data.train_seed, c.data.train_samples);
  }
  return load_dataset(c.data.root, c.data.train_split, c.data.label_remap);
}

std::vector<RGBDSample> evaluation_samples(const RunConfig& c) {
  if (c.data.source == "synthetic") {
    return synthetic_samples(c, c.data.eval_seed, c.data.eval_samples);
  }
  return load_dataset(c.data.root, c.data.eval_split, c.data.label_remap);
}

TrainResult train(const RunConfig& config, std::ostream& log) {
  config.validate();
  if (config.data.source == "directory") require_split(config, config.data.train_split);
  const auto samples = training_samples(config);
  if (samples.empty()) throw ValueError("no samples in the training split");
  if (!config.data.augment.enabled) {
    for (const auto& s : samples) check_input_size(s.height(), s.width());
  }

  const auto& tc = config.train;
  fs::create_directories(config.output_dir);
  {
    std::ofstream cfg(config.output_dir / "config.yaml");
    cfg << emit_yaml(config);
  }
  HfitModel model(config.model);
  model->train();
  std::vector<torch::Tensor> params;
  for (auto& [name, p] : model->trainable_parameters()) params.push_back(p);
  torch::optim::AdamW optimizer(params,
                                torch::optim::AdamWOptions(tc.lr).weight_decay(tc.weight_decay));

  TrainResult result;
  result.loss_log = config.output_dir / "loss.csv";
  std::ofstream csv(result.loss_log);
  if (!csv) throw IoError("cannot write '" + result.loss_log.string() + "'");
  csv << "iteration,loss\n" << std::setprecision(9);

  std::mt19937_64 rng(tc.data_seed);
  std::vector<size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  size_t cursor = order.size();

  for (int64_t it = 1; it <= tc.iterations; ++it) {
    double factor = tc.warmup > 0 ? std::min(1.0, static_cast<double>(it) / tc.warmup) : 1.0;
    if (tc.schedule == "poly" && it > tc.warmup) {
      factor = 1.0 - static_cast<double>(it - tc.warmup - 1) /
                         static_cast<double>(std::max<int64_t>(1, tc.iterations - tc.warmup));
    }
    for (auto& group : optimizer.param_groups()) {
      static_cast<torch::optim::AdamWOptions&>(group.options()).lr(tc.lr * factor);
    }

    std::vector<RGBDSample> batch;
    for (int64_t b = 0; b < tc.batch_size; ++b) {
      if (cursor == order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      batch.push_back(augment(samples[order[cursor++]], rng, config.data.augment));
    }
    auto inputs = collate(batch);
    optimizer.zero_grad();
    auto loss = segmentation_loss(model(inputs.rgb, inputs.depth3), inputs.labels,
                                  config.model.ignore_index);
    loss.backward();
    optimizer.step();

    const double value = loss.item<double>();
    result.losses.push_back(value);
    csv << it << ',' << value << '\n';
    if (tc.log_every > 0 && (it % tc.log_every == 0 || it == tc.iterations)) {
      log << "iter " << it << "/" << tc.iterations << " loss " << value << std::endl;
    }
    if (tc.checkpoint_every > 0 && it % tc.checkpoint_every == 0) {
      save_model(model, config.output_dir / "checkpoints" / ("iter_" + std::to_string(it) + ".ckpt"),
                 it);
    }
  }
  csv.flush();
  if (!csv) throw IoError("failed writing '" + result.loss_log.string() + "'");
  result.checkpoint = config.output_dir / "final.ckpt";
  save_model(model, result.checkpoint, tc.iterations);
  return result;
}

ConfusionMatrix confusion_over(HfitModel& model, const std::vector<RGBDSample>& samples,
                               int64_t shards) {
  if (shards < 1) throw ValueError("shard count must be >= 1");
  const auto& mc = model->config();
  torch::NoGradGuard no_grad;
  model->eval();
  std::vector<ConfusionMatrix> parts(shards, ConfusionMatrix(mc.num_classes));
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    auto logits = model(s.rgb.unsqueeze(0), s.depth3.unsqueeze(0));
    parts[i % shards].accumulate(logits.argmax(1).squeeze(0), s.labels, mc.ignore_index);
  }
  ConfusionMatrix total(mc.num_classes);
  for (const auto& p : parts) total.merge(p);
  return total;
}

namespace {

HfitModel model_from_checkpoint(const RunConfig& config, const fs::path& path) {
  const auto ckpt = read_checkpoint(path);
  if (ckpt.kind != "hfit") {
    throw ConfigError("'" + path.string() + "' is a " + ckpt.kind + " checkpoint, not a model");
  }
  if (ckpt.fingerprint != fingerprint(config.model)) {
    throw ConfigError("checkpoint '" + path.string() +
                      "' was trained with a different model config");
  }
  HfitModel model(config.model);
  load_model_state(model, ckpt);
  model->eval();
  return model;
}

}  // namespace

MetricsReport evaluate(const RunConfig& config, const fs::path& checkpoint,
                       const fs::path& out_dir) {
  config.validate();
  if (config.data.source == "directory") require_split(config, config.data.eval_split);
  auto model = model_from_checkpoint(config, checkpoint);
  const auto samples = evaluation_samples(config);
  if (samples.empty()) throw ValueError("no samples in the evaluation split");
  const auto report = compute(confusion_over(model, samples, config.eval_shards));
  write_reports(report, out_dir.empty() ? config.output_dir / "eval" : out_dir);
  return report;
}

Prediction predict(const RunConfig& config, const fs::path& checkpoint, const fs::path& rgb_path,
                   const fs::path& depth_path, const fs::path& out_dir, bool pad) {
  config.validate();
  const auto rgb_png = read_png(rgb_path);
  const auto depth_png = read_png(depth_path);
  if (rgb_png.channels != 3 || rgb_png.bit_depth != 8) {
    throw IoError("rgb '" + rgb_path.string() + "' must be 8-bit RGB");
  }
  if (depth_png.channels != 1) {
    throw IoError("depth '" + depth_path.string() + "' must be single-channel");
  }
  if (depth_png.width != rgb_png.width || depth_png.height != rgb_png.height) {
    throw ShapeError("rgb and depth rasters differ in size");
  }
  const int64_t h = rgb_png.height, w = rgb_png.width;
  if (!pad) check_input_size(h, w);
  auto model = model_from_checkpoint(config, checkpoint);

  auto to_tensor = [](const PngImage& img) {
    std::vector<float> v(img.data.begin(), img.data.end());
    return torch::from_blob(v.data(), {img.height, img.width, img.channels}, torch::kFloat).clone();
  };
  auto rgb = to_tensor(rgb_png).permute({2, 0, 1}).div(255.0).unsqueeze(0);
  const double depth_max = depth_png.bit_depth == 16 ? 65535.0 : 255.0;
  auto depth = normalize_depth(to_tensor(depth_png).select(2, 0).to(torch::kDouble) / depth_max)
                   .unsqueeze(0);
  const int64_t ph = (h + 31) / 32 * 32, pw = (w + 31) / 32 * 32;
  if (ph != h || pw != w) {
    const std::vector<int64_t> padding = {0, pw - w, 0, ph - h};
    rgb = torch::nn::functional::pad(rgb, torch::nn::functional::PadFuncOptions(padding));
    depth = torch::nn::functional::pad(depth, torch::nn::functional::PadFuncOptions(padding));
  }
  torch::NoGradGuard no_grad;
  auto logits = model(rgb, depth).squeeze(0).slice(1, 0, h).slice(2, 0, w);
  Prediction out;
  out.probabilities = torch::softmax(logits.to(torch::kDouble), 0);
  out.labels = out.probabilities.argmax(0);

  fs::create_directories(out_dir);
  PngImage labels{static_cast<int>(w), static_cast<int>(h), 1, 8, {}};
  auto lab = out.labels.to(torch::kInt32).contiguous();
  labels.data.assign(lab.data_ptr<int32_t>(), lab.data_ptr<int32_t>() + lab.numel());
  write_png(out_dir / "labels.png", labels);
  for (int64_t c = 0; c < out.probabilities.size(0); ++c) {
    PngImage prob{static_cast<int>(w), static_cast<int>(h), 1, 8, {}};
    auto q = out.probabilities[c].mul(255.0).round().to(torch::kInt32).contiguous();
    prob.data.assign(q.data_ptr<int32_t>(), q.data_ptr<int32_t>() + q.numel());
    write_png(out_dir / ("prob_" + std::to_string(c) + ".png"), prob);
  }
  return out;
}

const std::vector<AblationMode>& all_ablation_modes() {
  static const std::vector<AblationMode> modes = {
      AblationMode::kRgb,         AblationMode::kDepth,         AblationMode::kRgbDepth,
      AblationMode::kNoRgbWeight, AblationMode::kNoDepthWeight, AblationMode::kNoHgfiVit,
      AblationMode::kNoHgfiAdapter};
  return modes;
}

std::string to_string(AblationMode mode) {
  switch (mode) {
    case AblationMode::kRgb: return "rgb";
    case AblationMode::kDepth: return "depth";
    case AblationMode::kRgbDepth: return "rgbdepth";
    case AblationMode::kNoRgbWeight: return "no-rgb-weight";
    case AblationMode::kNoDepthWeight: return "no-depth-weight";
    case AblationMode::kNoHgfiVit: return "no-hgfi-vit";
    case AblationMode::kNoHgfiAdapter: return "no-hgfi-adapter";
  }
  return "?";
}

AblationMode parse_ablation_mode(const std::string& name) {
  for (auto m : all_ablation_modes()) {
    if (to_string(m) == name) return m;
  }
  throw ConfigError("unknown ablation mode '" + name +
                    "' (expected rgb, depth, rgbdepth, no-rgb-weight, no-depth-weight, "
                    "no-hgfi-vit or no-hgfi-adapter)");
}

std::vector<AblationMode> parse_ablation_modes(const std::string& csv) {
  std::vector<AblationMode> modes;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (!item.empty()) modes.push_back(parse_ablation_mode(item));
  }
  if (modes.empty()) throw ConfigError("no ablation modes given");
  return modes;
}

AblationConfig ablation_switches(AblationMode mode) {
  AblationConfig a;
  switch (mode) {
    case AblationMode::kRgb: a.zero_depth_prior = true; break;
    case AblationMode::kDepth: a.zero_rgb_prior = true; break;
    case AblationMode::kRgbDepth: break;
    case AblationMode::kNoRgbWeight: a.rgb_weight = false; break;
    case AblationMode::kNoDepthWeight: a.depth_weight = false; break;
    case AblationMode::kNoHgfiVit: a.hgfi_vit = false; break;
    case AblationMode::kNoHgfiAdapter: a.hgfi_adapter = false; break;
  }
  return a;
}

ProbeResult probe_ablation(AblationMode mode, const HfitConfig& model_config) {
  auto cfg = model_config;
  cfg.ablation = ablation_switches(mode);
  HfitModel model(cfg);
  model->eval();
  torch::NoGradGuard no_grad;
  auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed + 17);
  auto rgb = torch::rand({1, 3, 64, 64}, gen);
  auto depth = torch::rand({1, 1, 64, 64}, gen).expand({1, 3, 64, 64}).contiguous();
  ForwardTrace trace;
  model(rgb, depth, &trace);
  const auto& first = trace.stages.front();

  auto fail = [&](const std::string& what) {
    return ProbeResult{false, to_string(mode) + ": " + what};
  };
  auto prior_from = [&](const torch::Tensor& r, const torch::Tensor& d) {
    return model->dspe->build_prior(r, d).tokens;
  };
  if (!torch::equal(trace.vit_embedded, model->backbone->patch_embed(rgb).tokens)) {
    return fail("ViT input is not the RGB patch embedding");
  }
  switch (mode) {
    case AblationMode::kRgb:
      if (!torch::equal(first.prior_in, prior_from(rgb, torch::zeros_like(depth)))) {
        return fail("spatial prior still depends on depth");
      }
      break;
    case AblationMode::kDepth:
      if (!torch::equal(first.prior_in, prior_from(torch::zeros_like(rgb), depth))) {
        return fail("spatial prior still depends on rgb");
      }
      break;
    case AblationMode::kRgbDepth:
      if (!torch::equal(first.prior_in, prior_from(rgb, depth))) {
        return fail("spatial prior differs from the two-branch prior");
      }
      break;
    case AblationMode::kNoRgbWeight:
    case AblationMode::kNoDepthWeight: {
      for (const auto& st : trace.stages) {
        const auto expected = mode == AblationMode::kNoRgbWeight
                                  ? st.prior_confidence * st.prior_in
                                  : (1.0 - st.vit_confidence) * st.prior_in;
        if (!torch::equal(st.prior_recalibrated, expected)) {
          return fail("recalibration does not drop the disabled factor");
        }
      }
      TokenPyramid p{first.prior_in, pyramid_layout(64, 64)};
      auto both_off = recalibrate(p, first.vit_confidence, first.prior_confidence, false, false);
      if (!torch::equal(both_off.tokens, first.prior_in)) {
        return fail("recalibration with both factors disabled is not the identity");
      }
      break;
    }
    case AblationMode::kNoHgfiVit:
      for (const auto& st : trace.stages) {
        if (!torch::equal(st.vit_integrated, st.vit_stage_out)) {
          return fail("ViT integration is not a pass-through");
        }
      }
      break;
    case AblationMode::kNoHgfiAdapter:
      for (const auto& st : trace.stages) {
        if (!torch::equal(st.prior_integrated, st.prior_recalibrated)) {
          return fail("prior integration is not a pass-through");
        }
      }
      break;
  }
  return {true, to_string(mode) + ": ok"};
}

std::vector<AblationRow> ablate(const RunConfig& config, const std::vector<AblationMode>& modes,
                                std::ostream& log) {
  config.validate();
  std::vector<AblationRow> rows;
  for (auto mode : modes) {
    const auto probe = probe_ablation(mode, config.model);
    log << "probe " << probe.message << std::endl;
    if (!probe.passed) throw ValueError("ablation probe failed: " + probe.message);
    AblationRow row{mode, {}};
    for (int64_t r = 0; r < config.ablation_runs; ++r) {
      RunConfig rc = config;
      rc.model.ablation = ablation_switches(mode);
      rc.model.seed = config.model.seed + static_cast<uint64_t>(r);
      rc.train.data_seed = config.train.data_seed + static_cast<uint64_t>(r);
      rc.output_dir = config.output_dir / "ablate" / to_string(mode);
      if (config.ablation_runs > 1) rc.output_dir /= "run" + std::to_string(r);
      log << "train " << to_string(mode) << " run " << r << std::endl;
      const auto trained = train(rc, log);
      row.runs.push_back(evaluate(rc, trained.checkpoint));
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

struct Group {
  std::string title;
  std::string left, right;  // the two switch columns
  std::vector<AblationMode> modes;
};

std::pair<bool, bool> switch_columns(size_t group, AblationMode mode) {
  const auto a = ablation_switches(mode);
  if (group == 0) return {!a.zero_rgb_prior, !a.zero_depth_prior};
  if (group == 1) return {a.rgb_weight, a.depth_weight};
  return {a.hgfi_vit, a.hgfi_adapter};
}

}  // namespace

std::string format_ablation_table(const std::vector<AblationRow>& rows) {
  const std::vector<Group> groups = {
      {"DSPE inputs", "RGB", "Depth",
       {AblationMode::kRgb, AblationMode::kDepth, AblationMode::kRgbDepth}},
      {"RHFF recalibration", "1-C_V", "C_S",
       {AblationMode::kNoRgbWeight, AblationMode::kNoDepthWeight, AblationMode::kRgbDepth}},
      {"HGFI integration", "ViT", "Adapter",
       {AblationMode::kNoHgfiVit, AblationMode::kNoHgfiAdapter, AblationMode::kRgbDepth}},
  };
  const bool multi = std::any_of(rows.begin(), rows.end(),
                                 [](const AblationRow& r) { return r.runs.size() > 1; });
  auto pct = [](double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << 100.0 * v;
    return os.str();
  };
  std::ostringstream os;
  for (size_t g = 0; g < groups.size(); ++g) {
    std::vector<const AblationRow*> members;
    for (auto m : groups[g].modes) {
      for (const auto& r : rows) {
        if (r.mode == m) members.push_back(&r);
      }
    }
    // A group holding only the full model says nothing on its own.
    const bool only_full = std::all_of(members.begin(), members.end(), [](const AblationRow* r) {
      return r->mode == AblationMode::kRgbDepth;
    });
    if (members.empty() || (only_full && g > 0)) continue;
    os << "== " << groups[g].title << " ==\n";
    os << std::left << std::setw(17) << "mode" << std::setw(8) << groups[g].left << std::setw(8)
       << groups[g].right << std::right;
    for (const char* k : {"mFsc", "mIoU", "aAcc", "mPre", "mRec"}) os << std::setw(8) << k;
    if (multi) os << std::setw(12) << "mIoU range";
    os << '\n';
    for (const auto* r : members) {
      const auto [l, rt] = switch_columns(g, r->mode);
      os << std::left << std::setw(17) << to_string(r->mode) << std::setw(8) << (l ? "yes" : "no")
         << std::setw(8) << (rt ? "yes" : "no") << std::right;
      const double n = static_cast<double>(r->runs.size());
      double f = 0, i = 0, a = 0, p = 0, c = 0;
      std::vector<double> ious;
      for (const auto& m : r->runs) {
        f += m.mFsc / n;
        i += m.mIoU / n;
        a += m.aAcc / n;
        p += m.mPre / n;
        c += m.mRec / n;
        ious.push_back(100.0 * m.mIoU);
      }
      for (double v : {f, i, a, p, c}) os << std::setw(8) << pct(v);
      if (multi) {
        std::ostringstream range;
        if (ious.size() > 1) {
          range << std::fixed << std::setprecision(2) << error_range(ious);
        } else {
          range << "-";
        }
        os << std::setw(12) << range.str();
      }
      os << '\n';
    }
    os << '\n';
  }
  return os.str();
}

std::string inspect(const fs::path& checkpoint) {
  auto loaded = load_model(checkpoint);
  const auto counts = loaded.model->parameter_counts();
  auto millions = [](int64_t n) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << static_cast<double>(n) / 1e6;
    return os.str();
  };
  std::ostringstream os;
  os << "checkpoint " << checkpoint.string() << " (iteration " << loaded.iteration << ")\n";
  os << std::left << std::setw(10) << "module" << std::right << std::setw(12) << "total"
     << std::setw(12) << "frozen" << std::setw(12) << "trainable" << std::setw(10) << "total(M)"
     << std::setw(11) << "frozen(M)" << std::setw(14) << "trainable(M)" << '\n';
  ParameterCount all;
  auto line = [&](const std::string& name, const ParameterCount& c) {
    os << std::left << std::setw(10) << name << std::right << std::setw(12) << c.total
       << std::setw(12) << c.frozen << std::setw(12) << c.trainable() << std::setw(10)
       << millions(c.total) << std::setw(11) << millions(c.frozen) << std::setw(14)
       << millions(c.trainable()) << '\n';
  };
  for (const auto* name : {"backbone", "dspe", "rhff", "hgfi", "decoder"}) {
    auto it = counts.find(name);
    const ParameterCount c = it == counts.end() ? ParameterCount{} : it->second;
    line(name, c);
    all.total += c.total;
    all.frozen += c.frozen;
  }
  line("all", all);
  return os.str();
}

}  // namespace hfit
