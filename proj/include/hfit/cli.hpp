#pragma once

// Run configuration and the train / eval / predict / ablate / inspect commands
// behind the `hfit` executable.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "hfit/config.hpp"
#include "hfit/data_pipeline.hpp"
#include "hfit/hfit_model.hpp"
#include "hfit/metrics.hpp"

namespace hfit {

struct DataConfig {
  std::string source = "synthetic";  // "synthetic" or "directory"
  std::filesystem::path root;
  std::string train_split = "train";
  std::string eval_split = "val";
  SynthConfig synth;
  uint64_t train_seed = 0;  // synthetic sample i uses seed train_seed + i
  int64_t train_samples = 4;
  uint64_t eval_seed = 1000000;
  int64_t eval_samples = 4;
  LabelRemap label_remap;
  AugmentConfig augment;  // crop_size and ignore_index follow the model config
};

struct TrainConfig {
  int64_t iterations = 20000;
  int64_t batch_size = 2;
  double lr = 1e-4;
  double weight_decay = 0.01;
  int64_t warmup = 100;
  std::string schedule = "constant";  // after warmup: "constant" or "poly" (linear to 0)
  int64_t checkpoint_every = 0;       // 0: final checkpoint only
  uint64_t data_seed = 0;
  int64_t log_every = 50;
};

struct RunConfig {
  HfitConfig model;
  DataConfig data;
  TrainConfig train;
  int64_t eval_shards = 1;
  int64_t ablation_runs = 1;
  std::filesystem::path output_dir = "runs/default";

  // Every check that can fail without touching the filesystem, plus
  // writability of the output directory and presence of dataset splits.
  void validate() const;
};

RunConfig parse_run_config(const std::string& yaml_text);
RunConfig load_run_config(const std::filesystem::path& path);
std::string emit_yaml(const RunConfig& config);

// Samples for training or evaluation as described by the data section.
std::vector<RGBDSample> training_samples(const RunConfig& config);
std::vector<RGBDSample> evaluation_samples(const RunConfig& config);

struct TrainResult {
  std::filesystem::path checkpoint;
  std::filesystem::path loss_log;
  std::vector<double> losses;
};

// Writes <output_dir>/loss.csv, <output_dir>/checkpoints/iter_<n>.ckpt at the
// cadence, and <output_dir>/final.ckpt.
TrainResult train(const RunConfig& config, std::ostream& log);

// Runs the model in eval mode over `samples`, split round-robin into `shards`
// confusion matrices that are merged at the end.
ConfusionMatrix confusion_over(HfitModel& model, const std::vector<RGBDSample>& samples,
                               int64_t shards);

// ConfigError when the checkpoint was trained with a different model config.
// Reports go to `out_dir` (default <output_dir>/eval).
MetricsReport evaluate(const RunConfig& config, const std::filesystem::path& checkpoint,
                       const std::filesystem::path& out_dir = {});

struct Prediction {
  torch::Tensor probabilities;  // (C, H, W) float64 softmax
  torch::Tensor labels;         // (H, W) argmax
};

// Writes labels.png and prob_<c>.png (C files) into out_dir. With `pad`, inputs
// that are not multiples of 32 are zero-padded and outputs cropped back.
Prediction predict(const RunConfig& config, const std::filesystem::path& checkpoint,
                   const std::filesystem::path& rgb_path, const std::filesystem::path& depth_path,
                   const std::filesystem::path& out_dir, bool pad = false);

enum class AblationMode {
  kRgb,
  kDepth,
  kRgbDepth,
  kNoRgbWeight,
  kNoDepthWeight,
  kNoHgfiVit,
  kNoHgfiAdapter,
};
const std::vector<AblationMode>& all_ablation_modes();
std::string to_string(AblationMode mode);
AblationMode parse_ablation_mode(const std::string& name);
std::vector<AblationMode> parse_ablation_modes(const std::string& csv);
AblationConfig ablation_switches(AblationMode mode);

struct ProbeResult {
  bool passed = false;
  std::string message;
};
// Checks that the mode's bypass behaves as specified on a freshly built model.
ProbeResult probe_ablation(AblationMode mode, const HfitConfig& model_config);

struct AblationRow {
  AblationMode mode;
  std::vector<MetricsReport> runs;
};

// Probe, train and evaluate every mode; results under <output_dir>/ablate/<mode>.
// ValueError if a probe fails (before that mode trains).
std::vector<AblationRow> ablate(const RunConfig& config, const std::vector<AblationMode>& modes,
                                std::ostream& log);
std::string format_ablation_table(const std::vector<AblationRow>& rows);

std::string inspect(const std::filesystem::path& checkpoint);

}  // namespace hfit
