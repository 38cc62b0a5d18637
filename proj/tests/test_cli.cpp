#include <gtest/gtest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "hfit/checkpoint.hpp"
#include "hfit/cli.hpp"
#include "hfit/errors.hpp"
#include "hfit/png_io.hpp"
#include "support/fixtures.hpp"

using namespace hfit;
using hfit::testing::TempDir;
using hfit::testing::tiny_config;

namespace fs = std::filesystem;

namespace {

RunConfig tiny_run(const fs::path& out) {
  RunConfig c;
  c.model = tiny_config();
  c.data.synth.classes = c.model.num_classes;
  c.data.synth.height = c.data.synth.width = 32;
  c.data.train_samples = 2;
  c.data.eval_samples = 3;
  c.data.augment.crop_size = 32;
  c.train.iterations = 4;
  c.train.batch_size = 2;
  c.train.warmup = 2;
  c.train.lr = 1e-3;
  c.train.log_every = 0;
  c.output_dir = out;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int status;
  std::string output;
};

Run run_cli(const std::string& args) {
  const std::string cmd = std::string(HFIT_CLI_PATH) + " " + args + " 2>&1";
  Run r{0, ""};
  FILE* pipe = popen(cmd.c_str(), "r");
  std::array<char, 512> buf;
  while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
  r.status = WEXITSTATUS(pclose(pipe));
  return r;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST(RunConfigYaml, RoundTrip) {
  auto c = tiny_run("runs/x");
  c.data.label_remap = {{7, 255}, {3, 1}};
  c.train.schedule = "poly";
  auto back = parse_run_config(emit_yaml(c));
  EXPECT_EQ(back.model, c.model);
  EXPECT_EQ(back.data.augment, c.data.augment);
  EXPECT_EQ(back.data.label_remap, c.data.label_remap);
  EXPECT_EQ(back.train.schedule, "poly");
  EXPECT_EQ(back.train.iterations, 4);
  EXPECT_EQ(emit_yaml(back), emit_yaml(c));
}

TEST(RunConfigYaml, UnknownKeysNameTheirPath) {
  try {
    parse_run_config("train:\n  iterashuns: 5\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("train.iterashuns"), std::string::npos);
  }
  try {
    parse_run_config("model:\n  rhff:\n    kernal: 3\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.rhff.kernal"), std::string::npos);
  }
  EXPECT_THROW(parse_run_config("train: [1, 2"), ConfigError);
  EXPECT_THROW(parse_run_config("train:\n  iterations: many\n"), ConfigError);
}

TEST(RunConfigYaml, ShippedConfigsParse) {
  auto desk = load_run_config(fs::path(HFIT_SOURCE_DIR) / "configs/desk.yaml");
  EXPECT_EQ(desk.model.backbone.embed_dim, 192);
  EXPECT_EQ(desk.model.backbone.depth, 8);
  EXPECT_EQ(desk.model.backbone.stages, 4);
  EXPECT_EQ(desk.model.num_classes, 6);
  EXPECT_EQ(desk.train.iterations, 500);
  EXPECT_EQ(desk.data.synth.height, 64);
  auto full = load_run_config(fs::path(HFIT_SOURCE_DIR) / "configs/full.yaml");
  EXPECT_EQ(full.train.iterations, 20000);
  EXPECT_EQ(full.model.crop_size, 448);
  EXPECT_EQ(full.data.augment.crop_size, 448);
  EXPECT_DOUBLE_EQ(full.train.lr, 1e-4);
}

TEST(RunConfigYaml, DefaultsFollowTheLongSchedule) {
  RunConfig c;
  EXPECT_EQ(c.train.iterations, 20000);
  EXPECT_DOUBLE_EQ(c.train.lr, 1e-4);
  EXPECT_DOUBLE_EQ(c.train.weight_decay, 0.01);
  EXPECT_EQ(c.train.warmup, 100);
}

TEST(Validate, RejectsBeforeSideEffects) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  c.train.iterations = 0;
  EXPECT_THROW(train(c, std::cout), ConfigError);
  EXPECT_FALSE(fs::exists(dir / "run"));
  c = tiny_run(dir / "run");
  c.train.schedule = "cosine";
  EXPECT_THROW(train(c, std::cout), ConfigError);
  write_text(dir / "plain_file", "x");
  c = tiny_run(dir / "plain_file/run");
  EXPECT_THROW(c.validate(), IoError);
  c = tiny_run(dir / "run");
  c.data.source = "directory";
  c.data.root = dir / "nowhere";
  EXPECT_THROW(train(c, std::cout), IoError);
  EXPECT_FALSE(fs::exists(dir / "run"));
}

TEST(Train, OneIterationOneRecord) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  c.train.iterations = 1;
  auto r = train(c, std::cout);
  EXPECT_EQ(r.losses.size(), 1u);
  EXPECT_EQ(slurp(r.loss_log).substr(0, 15), "iteration,loss\n");
  std::istringstream lines(slurp(r.loss_log));
  std::string line;
  int count = 0;
  while (std::getline(lines, line)) ++count;
  EXPECT_EQ(count, 2);
  EXPECT_TRUE(fs::exists(dir / "run/final.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run/config.yaml"));
}

TEST(Train, DeterministicLogsAndFrozenBackbone) {
  TempDir dir;
  auto a = tiny_run(dir / "a");
  a.data.augment.enabled = true;
  a.train.checkpoint_every = 2;
  auto b = a;
  b.output_dir = dir / "b";
  auto ra = train(a, std::cout), rb = train(b, std::cout);
  EXPECT_EQ(slurp(ra.loss_log), slurp(rb.loss_log));
  EXPECT_TRUE(fs::exists(dir / "a/checkpoints/iter_2.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "a/checkpoints/iter_4.ckpt"));

  HfitModel fresh(a.model);
  auto trained = load_model(ra.checkpoint);
  EXPECT_EQ(trained.model->backbone->checksum(), fresh->backbone->checksum());
  EXPECT_EQ(trained.iteration, 4);
}

TEST(Evaluate, TwiceIsBitwiseAndShardsAgree) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  auto r = train(c, std::cout);
  evaluate(c, r.checkpoint, dir / "e1");
  evaluate(c, r.checkpoint, dir / "e2");
  EXPECT_EQ(slurp(dir / "e1/metrics.kv"), slurp(dir / "e2/metrics.kv"));
  EXPECT_EQ(slurp(dir / "e1/metrics.txt"), slurp(dir / "e2/metrics.txt"));
  c.eval_shards = 2;
  evaluate(c, r.checkpoint, dir / "e3");
  EXPECT_EQ(slurp(dir / "e1/metrics.kv"), slurp(dir / "e3/metrics.kv"));
  evaluate(c, r.checkpoint);
  EXPECT_TRUE(fs::exists(dir / "run/eval/metrics.kv"));
}

TEST(Evaluate, EmptySplitAndMismatchedCheckpoint) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  auto r = train(c, std::cout);
  fs::create_directories(dir / "data/splits");
  write_text(dir / "data/splits/val.txt", "");
  auto d = c;
  d.data.source = "directory";
  d.data.root = dir / "data";
  try {
    evaluate(d, r.checkpoint, dir / "empty");
    FAIL();
  } catch (const ValueError& e) {
    EXPECT_NE(std::string(e.what()).find("no samples"), std::string::npos);
  }
  EXPECT_FALSE(fs::exists(dir / "empty"));

  auto other = c;
  other.model.decoder_channels = 16;
  EXPECT_THROW(evaluate(other, r.checkpoint, dir / "other"), ConfigError);
}

TEST(Evaluate, DirectoryDatasetRoundTrip) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  auto sc = c.data.synth;
  write_dataset(dir / "data", "train", {synth_scene(1, sc), synth_scene(2, sc)});
  write_dataset(dir / "data", "val", {synth_scene(3, sc)});
  c.data.source = "directory";
  c.data.root = dir / "data";
  auto r = train(c, std::cout);
  auto report = evaluate(c, r.checkpoint);
  EXPECT_GE(report.aAcc, 0.0);
  EXPECT_LE(report.aAcc, 1.0);
}

TEST(Predict, ProbabilityAndLabelRasters) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  auto r = train(c, std::cout);
  auto scene = synth_scene(9, c.data.synth);
  write_dataset(dir / "img", "x", {scene});
  auto p = predict(c, r.checkpoint, dir / "img/rgb/synth_9.png", dir / "img/depth/synth_9.png",
                   dir / "pred");
  const int64_t classes = c.model.num_classes;
  int files = 0;
  for (const auto& e : fs::directory_iterator(dir / "pred")) {
    (void)e;
    ++files;
  }
  EXPECT_EQ(files, classes + 1);
  EXPECT_LE((p.probabilities.sum(0) - 1).abs().max().item<double>(), 1e-6);
  EXPECT_TRUE(torch::equal(p.labels, p.probabilities.argmax(0)));

  auto labels = read_png(dir / "pred/labels.png");
  EXPECT_EQ(labels.bit_depth, 8);
  std::vector<PngImage> probs;
  for (int64_t k = 0; k < classes; ++k) {
    probs.push_back(read_png(dir / "pred" / ("prob_" + std::to_string(k) + ".png")));
  }
  for (size_t i = 0; i < labels.data.size(); ++i) {
    int sum = 0;
    for (const auto& img : probs) sum += img.data[i];
    EXPECT_LE(std::abs(sum - 255), classes);
    EXPECT_EQ(labels.data[i], p.labels.view(-1)[static_cast<int64_t>(i)].item<int64_t>());
  }
}

TEST(Predict, PaddingAndSizeChecks) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  auto r = train(c, std::cout);
  PngImage rgb{40, 36, 3, 8, std::vector<uint16_t>(40 * 36 * 3, 120)};
  PngImage depth{40, 36, 1, 16, std::vector<uint16_t>(40 * 36, 0)};
  depth.data[3] = 60000;
  write_png(dir / "rgb.png", rgb);
  write_png(dir / "depth.png", depth);
  EXPECT_THROW(predict(c, r.checkpoint, dir / "rgb.png", dir / "depth.png", dir / "p1"),
               ShapeError);
  auto p = predict(c, r.checkpoint, dir / "rgb.png", dir / "depth.png", dir / "p2", true);
  EXPECT_EQ(p.labels.sizes(), (std::vector<int64_t>{36, 40}));
  EXPECT_EQ(read_png(dir / "p2/labels.png").width, 40);
  EXPECT_THROW(predict(c, r.checkpoint, dir / "none.png", dir / "depth.png", dir / "p3"), IoError);
}

TEST(Ablation, ModeParsing) {
  EXPECT_EQ(parse_ablation_modes("rgb, depth,no-hgfi-vit").size(), 3u);
  EXPECT_THROW(parse_ablation_mode("no-gamma"), ConfigError);
  EXPECT_THROW(parse_ablation_modes(" , "), ConfigError);
  for (auto m : all_ablation_modes()) EXPECT_EQ(parse_ablation_mode(to_string(m)), m);
}

TEST(Ablation, EveryProbePasses) {
  for (auto m : all_ablation_modes()) {
    auto r = probe_ablation(m, tiny_config());
    EXPECT_TRUE(r.passed) << r.message;
  }
}

TEST(Ablation, BothWeightsOffIsIdentity) {
  auto cfg = tiny_config();
  cfg.ablation.rgb_weight = false;
  cfg.ablation.depth_weight = false;
  HfitModel model(cfg);
  model->eval();
  ForwardTrace trace;
  torch::NoGradGuard no_grad;
  auto rgb = torch::rand({1, 3, 32, 32});
  model(rgb, rgb, &trace);
  for (const auto& st : trace.stages) EXPECT_TRUE(torch::equal(st.prior_recalibrated, st.prior_in));
}

TEST(Ablation, ThreeModesThreeRows) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  c.train.iterations = 2;
  std::ostringstream log;
  auto rows = ablate(c, parse_ablation_modes("rgb,no-rgb-weight,no-hgfi-adapter"), log);
  ASSERT_EQ(rows.size(), 3u);
  EXPECT_EQ(rows[0].mode, AblationMode::kRgb);
  EXPECT_TRUE(fs::exists(dir / "run/ablate/no-rgb-weight/eval/metrics.kv"));
  auto table = format_ablation_table(rows);
  EXPECT_NE(table.find("DSPE inputs"), std::string::npos);
  EXPECT_NE(table.find("RHFF recalibration"), std::string::npos);
  EXPECT_NE(table.find("HGFI integration"), std::string::npos);
  EXPECT_NE(log.str().find("probe rgb: ok"), std::string::npos);
}

TEST(Ablation, RepeatedRunsReportRange) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  c.train.iterations = 1;
  c.ablation_runs = 2;
  std::ostringstream log;
  auto rows = ablate(c, {AblationMode::kRgbDepth}, log);
  ASSERT_EQ(rows[0].runs.size(), 2u);
  EXPECT_NE(format_ablation_table(rows).find("mIoU range"), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run/ablate/rgbdepth/run1/final.ckpt"));
}

TEST(Inspect, PartitionAndStability) {
  TempDir dir;
  HfitModel model(tiny_config());
  save_model(model, dir / "m.ckpt", 3);
  auto a = inspect(dir / "m.ckpt");
  EXPECT_EQ(a, inspect(dir / "m.ckpt"));
  auto counts = model->parameter_counts();
  int64_t total = 0, frozen = 0;
  for (auto& [k, v] : counts) {
    total += v.total;
    frozen += v.frozen;
    EXPECT_EQ(v.trainable() + v.frozen, v.total);
  }
  int64_t backbone = 0;
  for (auto& p : model->backbone->parameters()) backbone += p.numel();
  EXPECT_EQ(frozen, backbone);
  std::istringstream lines(a);
  std::string line, last;
  while (std::getline(lines, line)) {
    if (!line.empty()) last = line;
  }
  std::istringstream fields(last);
  std::string name;
  int64_t t = 0, f = 0, tr = 0;
  fields >> name >> t >> f >> tr;
  EXPECT_EQ(name, "all");
  EXPECT_EQ(t, total);
  EXPECT_EQ(f, frozen);
  EXPECT_EQ(tr + f, t);
  EXPECT_THROW(inspect(dir / "nope.ckpt"), IoError);
}

TEST(Executable, ErrorsAreSingleLineWithPrefix) {
  TempDir dir;
  auto r = run_cli("train --config " + (dir / "missing.yaml").string());
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.output.rfind("HFIT_ERROR io: ", 0), 0u) << r.output;
  EXPECT_EQ(std::count(r.output.begin(), r.output.end(), '\n'), 1);

  write_text(dir / "bad.yaml", "train:\n  iterations: 0\noutput_dir: " + (dir / "o").string() + "\n");
  r = run_cli("train --config " + (dir / "bad.yaml").string());
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.output.rfind("HFIT_ERROR config: ", 0), 0u) << r.output;
  EXPECT_FALSE(fs::exists(dir / "o"));

  r = run_cli("ablate --config " + (dir / "bad.yaml").string() + " --modes rgb,bogus");
  EXPECT_EQ(r.output.rfind("HFIT_ERROR config: unknown ablation mode", 0), 0u) << r.output;

  r = run_cli("frobnicate");
  EXPECT_NE(r.status, 0);
  EXPECT_EQ(r.output.rfind("HFIT_ERROR usage: ", 0), 0u) << r.output;
}

TEST(Executable, TrainEvalInspectRoundTrip) {
  TempDir dir;
  auto c = tiny_run(dir / "run");
  c.train.iterations = 2;
  write_text(dir / "run.yaml", emit_yaml(c));
  const auto cfg = (dir / "run.yaml").string();
  auto r = run_cli("train --config " + cfg);
  ASSERT_EQ(r.status, 0) << r.output;
  r = run_cli("eval --config " + cfg + " --checkpoint " + (dir / "run/final.ckpt").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("mIoU"), std::string::npos);
  r = run_cli("inspect --checkpoint " + (dir / "run/final.ckpt").string());
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_NE(r.output.find("backbone"), std::string::npos);
  r = run_cli("synth --config " + cfg + " --out " + (dir / "ds").string() + " --count 2");
  ASSERT_EQ(r.status, 0) << r.output;
  EXPECT_EQ(load_dataset(dir / "ds", "train").size(), 2u);
}
