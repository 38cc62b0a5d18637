#include "hfit/goldens.hpp"

#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hfit/config.hpp"
#include "hfit/errors.hpp"
#include "hfit/hfit_model.hpp"
#include "hfit/hgfi.hpp"
#include "hfit/layout.hpp"
#include "hfit/metrics.hpp"
#include "hfit/rhff.hpp"
#include "hfit/yaml_schema.hpp"

namespace hfit {

torch::Tensor read_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("fixture '" + path.string() + "' not found");
  std::string header;
  std::getline(in, header);
  std::istringstream hs(header);
  std::string tag;
  hs >> tag;
  if (tag != "shape:") throw IoError("fixture '" + path.string() + "' lacks a shape header");
  std::vector<int64_t> shape;
  int64_t d;
  while (hs >> d) {
    if (d < 0) throw IoError("fixture '" + path.string() + "' has a negative dimension");
    shape.push_back(d);
  }
  if (!hs.eof()) throw IoError("fixture '" + path.string() + "' has a malformed shape header");
  int64_t count = 1;
  for (auto s : shape) count *= s;
  std::vector<double> values;
  std::string word;
  while (in >> word) {
    try {
      size_t used = 0;
      values.push_back(std::stod(word, &used));
      if (used != word.size()) throw std::invalid_argument(word);
    } catch (const std::exception&) {
      throw IoError("fixture '" + path.string() + "' has a non-numeric value '" + word + "'");
    }
  }
  if (static_cast<int64_t>(values.size()) != count) {
    throw IoError("fixture '" + path.string() + "' holds " + std::to_string(values.size()) +
                  " values, shape needs " + std::to_string(count));
  }
  return torch::tensor(values, torch::kDouble).reshape(shape);
}

void write_fixture(const std::filesystem::path& path, const torch::Tensor& tensor) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write fixture '" + path.string() + "'");
  out << "shape:";
  for (auto s : tensor.sizes()) out << ' ' << s;
  out << '\n' << std::setprecision(17);
  auto flat = tensor.to(torch::kDouble).contiguous().view(-1);
  const int64_t row = tensor.dim() > 0 ? tensor.size(-1) : 1;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    out << flat[i].item<double>() << ((i + 1) % row == 0 ? '\n' : ' ');
  }
}

GoldenCase load_golden_case(const std::filesystem::path& dir) {
  GoldenCase g;
  g.id = dir.filename().string();
  const auto meta_path = dir / "case.yaml";
  if (!std::filesystem::exists(meta_path)) {
    throw IoError("golden case '" + g.id + "' lacks case.yaml");
  }
  YAML::Node meta;
  try {
    meta = YAML::LoadFile(meta_path.string());
    yaml_schema::require_map(meta, g.id);
    yaml_schema::reject_unknown(meta, g.id, {"op", "tolerance", "description"});
    g.op = meta["op"].as<std::string>();
    g.tolerance = meta["tolerance"] ? meta["tolerance"].as<double>() : 0.0;
    g.description = meta["description"] ? meta["description"].as<std::string>() : "";
  } catch (const YAML::Exception& e) {
    throw IoError("golden case '" + g.id + "' has a corrupt case.yaml: " + e.what());
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".txt") continue;
    const auto stem = entry.path().stem().string();
    if (stem.starts_with("input.")) {
      g.inputs[stem.substr(6)] = read_fixture(entry.path());
    } else if (stem.starts_with("expected.")) {
      g.expected[stem.substr(9)] = read_fixture(entry.path());
    } else {
      throw IoError("golden case '" + g.id + "' has an unexpected file '" + name + "'");
    }
  }
  if (g.expected.empty()) throw IoError("golden case '" + g.id + "' has no expected outputs");
  return g;
}

std::vector<GoldenCase> load_golden_suite(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw IoError("golden suite '" + dir.string() + "' not found");
  }
  std::vector<std::filesystem::path> dirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<GoldenCase> out;
  for (const auto& d : dirs) out.push_back(load_golden_case(d));
  return out;
}

namespace {

const torch::Tensor& need(const TensorMap& in, const std::string& name) {
  auto it = in.find(name);
  if (it == in.end()) throw ValueError("missing input '" + name + "'");
  return it->second;
}

// "size" input holds (H, W) of the raster a pyramid was built from.
LevelLayout layout_from(const TensorMap& in) {
  const auto& size = need(in, "size");
  return pyramid_layout(static_cast<int64_t>(size[0].item<double>()),
                        static_cast<int64_t>(size[1].item<double>()));
}

StageHistory history_from(const TensorMap& in) {
  StageHistory h;
  auto it = in.find("history_features");
  if (it == in.end()) return h;
  const auto& gates = need(in, "history_gates");
  for (int64_t l = 0; l < it->second.size(0); ++l) h.push(it->second[l], gates[l]);
  return h;
}

TensorMap op_recalibrate(const TensorMap& in) {
  TokenPyramid p{need(in, "tokens"), layout_from(in)};
  auto out = recalibrate(p, need(in, "vit_confidence"), need(in, "prior_confidence"));
  return {{"tokens", out.tokens}};
}

TensorMap op_integrate_vit(const TensorMap& in) {
  const auto& cur = need(in, "current");
  const auto& grid = need(in, "grid");
  ViTTokens v{cur, static_cast<int64_t>(grid[0].item<double>()),
              static_cast<int64_t>(grid[1].item<double>())};
  return {{"tokens", integrate_vit(v, need(in, "gate"), history_from(in)).tokens}};
}

TensorMap op_integrate_prior(const TensorMap& in) {
  TokenPyramid p{need(in, "current"), layout_from(in)};
  return {{"tokens", integrate_prior(p, need(in, "gate"), history_from(in)).tokens}};
}

TensorMap op_cross_entropy(const TensorMap& in) {
  return {{"loss", segmentation_loss(need(in, "logits"), need(in, "labels").to(torch::kLong))}};
}

TensorMap op_resample_bilinear(const TensorMap& in) {
  const auto& size = need(in, "size");
  return {{"map", resample(need(in, "map"), static_cast<int64_t>(size[0].item<double>()),
                           static_cast<int64_t>(size[1].item<double>()),
                           ResampleMode::kBilinear)}};
}

TensorMap op_metrics(const TensorMap& in) {
  ConfusionMatrix cm(static_cast<int64_t>(need(in, "classes").item<double>()));
  cm.accumulate(need(in, "pred").to(torch::kLong), need(in, "label").to(torch::kLong));
  const auto r = compute(cm);
  std::vector<double> iou, f1, pre, rec;
  for (const auto& c : r.per_class) {
    iou.push_back(c.iou);
    f1.push_back(c.f1);
    pre.push_back(c.precision);
    rec.push_back(c.recall);
  }
  auto vec = [](const std::vector<double>& v) { return torch::tensor(v, torch::kDouble); };
  auto scalar = [](double v) { return torch::tensor(v, torch::kDouble); };
  return {{"mIoU", scalar(r.mIoU)}, {"mFsc", scalar(r.mFsc)}, {"mPre", scalar(r.mPre)},
          {"mRec", scalar(r.mRec)}, {"aAcc", scalar(r.aAcc)}, {"iou", vec(iou)},
          {"f1", vec(f1)},          {"precision", vec(pre)},  {"recall", vec(rec)}};
}

}  // namespace

const std::map<std::string, GoldenOp>& golden_ops() {
  static const std::map<std::string, GoldenOp> ops = {
      {"recalibrate", op_recalibrate},       {"integrate_vit", op_integrate_vit},
      {"integrate_prior", op_integrate_prior}, {"cross_entropy", op_cross_entropy},
      {"resample_bilinear", op_resample_bilinear}, {"metrics", op_metrics},
  };
  return ops;
}

GoldenResult replay(const GoldenCase& golden) {
  GoldenResult r{golden.id, false, 0.0, ""};
  auto it = golden_ops().find(golden.op);
  if (it == golden_ops().end()) {
    r.detail = "unknown op '" + golden.op + "'";
    return r;
  }
  TensorMap outputs;
  try {
    outputs = it->second(golden.inputs);
  } catch (const std::exception& e) {
    r.detail = std::string("op raised: ") + e.what();
    return r;
  }
  std::ostringstream detail;
  detail << std::setprecision(17);
  bool ok = true;
  for (const auto& [name, want] : golden.expected) {
    auto got_it = outputs.find(name);
    if (got_it == outputs.end()) {
      detail << name << ": not produced\n";
      ok = false;
      continue;
    }
    auto got = got_it->second.detach().to(torch::kDouble).contiguous();
    if (got.numel() != want.numel()) {
      detail << name << ": shape " << shape_string(got) << " vs expected " << shape_string(want)
             << '\n';
      ok = false;
      continue;
    }
    auto g = got.view(-1), w = want.contiguous().view(-1);
    for (int64_t i = 0; i < g.numel(); ++i) {
      const double gv = g[i].item<double>(), wv = w[i].item<double>();
      const double diff = std::abs(gv - wv);
      r.max_abs_diff = std::max(r.max_abs_diff, std::isnan(diff) ? INFINITY : diff);
      if (!(diff <= golden.tolerance)) {
        detail << name << "[" << i << "]: got " << gv << ", expected " << wv << ", diff " << diff
               << '\n';
        ok = false;
      }
    }
  }
  r.passed = ok;
  r.detail = detail.str();
  return r;
}

std::vector<GoldenResult> replay_goldens(const std::filesystem::path& suite_dir) {
  std::vector<GoldenResult> out;
  for (const auto& g : load_golden_suite(suite_dir)) out.push_back(replay(g));
  return out;
}

}  // namespace hfit
