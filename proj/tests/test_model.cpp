#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "hfit/errors.hpp"
#include "hfit/hfit_model.hpp"
#include "support/fixtures.hpp"

using namespace hfit;
using hfit::testing::desk_config;
using hfit::testing::normal;
using hfit::testing::TempDir;
using hfit::testing::tiny_config;
using hfit::testing::uniform;

namespace {

std::pair<torch::Tensor, torch::Tensor> inputs(int64_t batch, int64_t side, uint64_t seed) {
  auto rgb = uniform({batch, 3, side, side}, seed);
  auto depth = uniform({batch, 1, side, side}, seed + 1).expand({batch, 3, side, side}).contiguous();
  return {rgb, depth};
}

}  // namespace

TEST(Model, DeskLogitShape) {
  HfitModel model(desk_config());
  model->eval();
  torch::NoGradGuard no_grad;
  auto [rgb, depth] = inputs(1, 64, 1);
  EXPECT_EQ(model(rgb, depth).sizes(), (std::vector<int64_t>{1, 6, 64, 64}));
}

TEST(Model, ZeroGammaTrajectoryIsPlainVit) {
  HfitModel model(tiny_config());
  model->train();
  auto [rgb, depth] = inputs(2, 64, 2);
  ForwardTrace trace;
  model(rgb, depth, &trace);
  auto plain = model->backbone->run_all(model->backbone->patch_embed(rgb));
  EXPECT_TRUE(torch::equal(trace.vit_final, plain.tokens));
  auto x = model->backbone->patch_embed(rgb);
  for (size_t i = 0; i < trace.stages.size(); ++i) {
    EXPECT_TRUE(torch::equal(trace.stages[i].vit_injected, x.tokens));
    x = model->backbone->run_stage(x, static_cast<int64_t>(i) + 1);
    EXPECT_TRUE(torch::equal(trace.stages[i].vit_stage_out, x.tokens));
  }
}

TEST(Model, EvalForwardIsDeterministic) {
  HfitModel model(tiny_config());
  model->eval();
  torch::NoGradGuard no_grad;
  auto [rgb, depth] = inputs(2, 64, 3);
  EXPECT_TRUE(torch::equal(model(rgb, depth), model(rgb.clone(), depth.clone())));
}

TEST(Model, SameSeedSameModel) {
  HfitModel a(tiny_config()), b(tiny_config());
  auto pa = a->named_parameters(), pb = b->named_parameters();
  ASSERT_EQ(pa.size(), pb.size());
  for (size_t i = 0; i < pa.size(); ++i) EXPECT_TRUE(torch::equal(pa[i].value(), pb[i].value()));
}

TEST(Model, BatchItemsIndependentInEval) {
  HfitModel model(tiny_config());
  model->eval();
  torch::NoGradGuard no_grad;
  auto [rgb, depth] = inputs(3, 32, 4);
  auto all = model(rgb, depth);
  auto perm = torch::tensor({2, 0, 1}, torch::kLong);
  auto permuted = model(rgb.index_select(0, perm), depth.index_select(0, perm));
  EXPECT_LE((permuted - all.index_select(0, perm)).abs().max().item<float>(), 1e-5);
  auto single = model(rgb.narrow(0, 1, 1), depth.narrow(0, 1, 1));
  EXPECT_LE((single - all.narrow(0, 1, 1)).abs().max().item<float>(), 1e-5);
}

TEST(Aggregate, ViTGoesIntoMiddleLevel) {
  TokenPyramid prior{normal({1, 84, 4}, 5), pyramid_layout(64, 64)};
  ViTTokens zero{torch::zeros({1, 16, 4}), 4, 4};
  auto g = aggregate_outputs(prior, zero);
  auto split = split_levels(prior);
  EXPECT_EQ(g[0].sizes(), (std::vector<int64_t>{1, 4, 8, 8}));
  EXPECT_EQ(g[2].sizes(), (std::vector<int64_t>{1, 4, 2, 2}));
  for (int t = 0; t < 3; ++t) EXPECT_TRUE(torch::equal(g[t], split[t]));
  ViTTokens vit{normal({1, 16, 4}, 6), 4, 4};
  auto h = aggregate_outputs(prior, vit);
  EXPECT_TRUE(torch::equal(h[0], split[0]));
  EXPECT_TRUE(torch::equal(h[2], split[2]));
  EXPECT_TRUE(torch::equal(h[1], split[1] + tokens_to_grid(vit.tokens, 4, 4)));
}

TEST(Decoder, ZeroClassifierGivesBiasPlanes) {
  Decoder dec(8, 8, 3);
  dec->eval();
  torch::NoGradGuard no_grad;
  dec->classifier->weight.zero_();
  dec->classifier->bias.copy_(torch::tensor({0.5f, -1.0f, 2.0f}));
  LevelGrids g = {normal({1, 8, 8, 8}, 7), normal({1, 8, 4, 4}, 8), normal({1, 8, 2, 2}, 9)};
  auto y = dec(g, 64, 64);
  ASSERT_EQ(y.sizes(), (std::vector<int64_t>{1, 3, 64, 64}));
  EXPECT_TRUE(torch::all(y[0][0] == 0.5f).item<bool>());
  EXPECT_TRUE(torch::all(y[0][1] == -1.0f).item<bool>());
  EXPECT_TRUE(torch::all(y[0][2] == 2.0f).item<bool>());
}

TEST(Decoder, ArgmaxIgnoresConstantShift) {
  auto logits = normal({2, 5, 8, 8}, 10);
  EXPECT_TRUE(torch::equal(torch::softmax(logits, 1).argmax(1),
                           torch::softmax(logits + 3.25, 1).argmax(1)));
}

TEST(Loss, UniformLogitsCostLog4) {
  auto logits = torch::zeros({1, 4, 3, 3}, torch::kDouble);
  auto labels = torch::randint(0, 4, {1, 3, 3}, torch::kLong);
  EXPECT_NEAR(segmentation_loss(logits, labels).item<double>(), std::log(4.0), 1e-12);
}

TEST(Loss, AllIgnoredIsZero) {
  auto logits = normal({1, 3, 4, 4}, 11).requires_grad_(true);
  auto labels = torch::full({1, 4, 4}, 255, torch::kLong);
  ::testing::internal::CaptureStderr();
  auto loss = segmentation_loss(logits, labels);
  const auto err = ::testing::internal::GetCapturedStderr();
  EXPECT_EQ(loss.item<float>(), 0.0f);
  EXPECT_NE(err.find("warning"), std::string::npos);
  loss.backward();
  EXPECT_EQ(logits.grad().abs().max().item<float>(), 0.0f);
}

TEST(Loss, ConfidentCorrectBeatsUniform) {
  auto labels = torch::randint(0, 4, {2, 5, 5}, torch::kLong);
  auto logits = torch::nn::functional::one_hot(labels, 4).permute({0, 3, 1, 2}).to(torch::kFloat) * 3;
  EXPECT_LT(segmentation_loss(logits, labels).item<float>(), std::log(4.0f));
  EXPECT_GE(segmentation_loss(normal({2, 4, 5, 5}, 12), labels).item<float>(), 0.0f);
}

TEST(Loss, BadLabelsAndShapes) {
  auto logits = torch::zeros({1, 3, 2, 2});
  EXPECT_THROW(segmentation_loss(logits, torch::full({1, 2, 2}, 3, torch::kLong)), ValueError);
  EXPECT_THROW(segmentation_loss(logits, torch::zeros({1, 3, 3}, torch::kLong)), ShapeError);
}

TEST(Loss, DecreasesWhenOverfittingOneSample) {
  HfitModel model(tiny_config());
  model->train();
  auto [rgb, depth] = inputs(2, 32, 13);
  auto labels = (rgb.select(1, 0) * 3).floor().clamp(0, 2).to(torch::kLong);
  std::vector<torch::Tensor> params;
  for (auto& [n, p] : model->trainable_parameters()) params.push_back(p);
  torch::optim::AdamW opt(params, torch::optim::AdamWOptions(3e-3));
  std::vector<double> losses;
  for (int i = 0; i < 100; ++i) {
    opt.zero_grad();
    auto loss = segmentation_loss(model(rgb, depth), labels);
    ASSERT_GE(loss.item<double>(), 0.0);
    loss.backward();
    opt.step();
    losses.push_back(loss.item<double>());
  }
  auto window = [&](int start) {
    double s = 0;
    for (int i = start; i < start + 10; ++i) s += losses[static_cast<size_t>(i)];
    return s / 10;
  };
  for (int w = 10; w < 100; w += 10) EXPECT_LT(window(w), window(w - 10) + 1e-9) << "window " << w;
}

TEST(TrainableParameters, FrozenExcludesBackbone) {
  auto cfg = tiny_config();
  HfitModel frozen(cfg);
  cfg.freeze_backbone = false;
  HfitModel open(cfg);
  std::set<std::string> frozen_names, open_names;
  for (auto& [n, p] : frozen->trainable_parameters()) {
    EXPECT_FALSE(n.starts_with("backbone.")) << n;
    frozen_names.insert(n);
  }
  for (auto& [n, p] : open->trainable_parameters()) open_names.insert(n);
  EXPECT_TRUE(std::includes(open_names.begin(), open_names.end(), frozen_names.begin(),
                            frozen_names.end()));
  EXPECT_GT(open_names.size(), frozen_names.size());

  int64_t listed = 0;
  for (auto& [n, p] : frozen->trainable_parameters()) listed += p.numel();
  int64_t trainable = 0, backbone_total = 0;
  for (auto& [module, c] : frozen->parameter_counts()) {
    trainable += c.trainable();
    if (module == "backbone") {
      EXPECT_EQ(c.frozen, c.total);
      backbone_total = c.total;
    }
  }
  EXPECT_EQ(listed, trainable);
  int64_t backbone_params = 0;
  for (auto& p : frozen->backbone->parameters()) backbone_params += p.numel();
  EXPECT_EQ(backbone_total, backbone_params);
}

TEST(Checkpoint, RoundTripIsBitwise) {
  TempDir dir;
  HfitModel model(tiny_config());
  {
    torch::NoGradGuard no_grad;
    for (auto& s : model->rhff_stages) s->injector->gamma.fill_(0.3f);
  }
  model->eval();
  save_model(model, dir / "m.ckpt", 7);
  auto loaded = load_model(dir / "m.ckpt");
  EXPECT_EQ(loaded.iteration, 7);
  loaded.model->eval();
  torch::NoGradGuard no_grad;
  auto [rgb, depth] = inputs(1, 64, 14);
  EXPECT_TRUE(torch::equal(model(rgb, depth), loaded.model(rgb, depth)));
}

TEST(Checkpoint, MismatchedModelRejected) {
  TempDir dir;
  HfitModel model(tiny_config());
  save_model(model, dir / "m.ckpt", 0);
  auto cfg = tiny_config();
  cfg.num_classes = 4;
  HfitModel other(cfg);
  EXPECT_THROW(load_model_state(other, read_checkpoint(dir / "m.ckpt")), ShapeError);
  EXPECT_THROW(load_model(dir / "missing.ckpt"), IoError);
}
