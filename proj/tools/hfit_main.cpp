// hfit command-line entry point.
//
// Failures print one line "HFIT_ERROR <category>: <message>" on stderr and
// exit with status 2 (usage and domain errors) or 1 (anything unexpected).

#include <CLI11.hpp>
#include <torch/torch.h>

#include <iostream>
#include <string>

#include "hfit/cli.hpp"
#include "hfit/errors.hpp"

namespace {

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

int fail(const std::string& category, const std::string& message, int code) {
  std::cerr << "HFIT_ERROR " << category << ": " << first_line(message) << std::endl;
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HFIT RGB-D scene parsing: train, evaluate, predict, ablate, inspect"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path, rgb_path, depth_path, out_dir, modes;
  bool pad = false;

  auto* train_cmd = app.add_subcommand("train", "train a model from a run config");
  train_cmd->add_option("--config", config_path, "run config (YAML)")->required();

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the eval split");
  eval_cmd->add_option("--config", config_path, "run config (YAML)")->required();
  eval_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  eval_cmd->add_option("--out", out_dir, "report directory (default <output_dir>/eval)");

  auto* predict_cmd = app.add_subcommand("predict", "label and probability maps for one image");
  predict_cmd->add_option("--config", config_path, "run config (YAML)")->required();
  predict_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
  predict_cmd->add_option("--rgb", rgb_path, "8-bit RGB PNG")->required();
  predict_cmd->add_option("--depth", depth_path, "16-bit (or 8-bit) gray depth PNG")->required();
  predict_cmd->add_option("--out", out_dir, "output directory")->required();
  predict_cmd->add_flag("--pad", pad, "zero-pad inputs that are not multiples of 32");

  auto* ablate_cmd = app.add_subcommand("ablate", "train and evaluate ablation modes");
  ablate_cmd->add_option("--config", config_path, "run config (YAML)")->required();
  ablate_cmd->add_option("--modes", modes, "comma-separated modes")
      ->default_val("rgb,depth,rgbdepth,no-rgb-weight,no-depth-weight,no-hgfi-vit,no-hgfi-adapter");

  auto* inspect_cmd = app.add_subcommand("inspect", "parameter counts of a checkpoint");
  inspect_cmd->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();

  std::string split = "train";
  int64_t count = 4;
  uint64_t seed = 0;
  auto* synth_cmd = app.add_subcommand("synth", "write synthetic scenes as a directory dataset");
  synth_cmd->add_option("--config", config_path, "run config (YAML) for scene settings")->required();
  synth_cmd->add_option("--out", out_dir, "dataset root")->required();
  synth_cmd->add_option("--split", split, "split name")->default_val("train");
  synth_cmd->add_option("--count", count, "number of scenes")->default_val(4);
  synth_cmd->add_option("--seed", seed, "seed of the first scene")->default_val(0);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*train_cmd) {
      const auto config = hfit::load_run_config(config_path);
      const auto result = hfit::train(config, std::cout);
      std::cout << "checkpoint " << result.checkpoint.string() << "\n"
                << "loss log " << result.loss_log.string() << std::endl;
    } else if (*eval_cmd) {
      const auto config = hfit::load_run_config(config_path);
      const auto report = hfit::evaluate(config, checkpoint_path, out_dir);
      std::cout << hfit::format_table(report);
    } else if (*predict_cmd) {
      const auto config = hfit::load_run_config(config_path);
      hfit::predict(config, checkpoint_path, rgb_path, depth_path, out_dir, pad);
      std::cout << "wrote " << out_dir << std::endl;
    } else if (*ablate_cmd) {
      const auto config = hfit::load_run_config(config_path);
      const auto parsed = hfit::parse_ablation_modes(modes);
      const auto rows = hfit::ablate(config, parsed, std::cout);
      std::cout << hfit::format_ablation_table(rows);
    } else if (*inspect_cmd) {
      std::cout << hfit::inspect(checkpoint_path);
    } else if (*synth_cmd) {
      auto config = hfit::load_run_config(config_path);
      config.output_dir = out_dir;
      config.validate();
      if (count < 1) throw hfit::ConfigError("--count must be >= 1");
      std::vector<hfit::RGBDSample> scenes;
      for (int64_t i = 0; i < count; ++i) {
        scenes.push_back(hfit::synth_scene(seed + static_cast<uint64_t>(i), config.data.synth));
      }
      hfit::write_dataset(out_dir, split, scenes);
      std::cout << "wrote " << count << " scenes to " << out_dir << std::endl;
    }
  } catch (const hfit::Error& e) {
    return fail(e.category(), e.what(), 2);
  } catch (const c10::Error& e) {
    return fail("torch", e.what_without_backtrace(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
  return 0;
}
