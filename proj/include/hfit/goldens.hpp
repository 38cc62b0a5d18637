#pragma once

// Golden fixture cases replayed against the build.
//
// A suite is a directory of case directories. Each case holds
//   case.yaml                 op, tolerance, description
//   input.<name>.txt          tensors passed to the op
//   expected.<name>.txt       tensors the op must reproduce
// Tensor files: first line "shape: d1 d2 ...", then whitespace-separated
// decimal values in row-major order.

#include <torch/torch.h>

#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace hfit {

using TensorMap = std::map<std::string, torch::Tensor>;

// float64 tensors. IoError on missing or malformed files.
torch::Tensor read_fixture(const std::filesystem::path& path);
void write_fixture(const std::filesystem::path& path, const torch::Tensor& tensor);

struct GoldenCase {
  std::string id;
  std::string op;
  std::string description;
  double tolerance = 0.0;
  TensorMap inputs;
  TensorMap expected;
};

GoldenCase load_golden_case(const std::filesystem::path& dir);
// Cases sorted by directory name.
std::vector<GoldenCase> load_golden_suite(const std::filesystem::path& dir);

using GoldenOp = std::function<TensorMap(const TensorMap&)>;
const std::map<std::string, GoldenOp>& golden_ops();

struct GoldenResult {
  std::string id;
  bool passed = false;
  double max_abs_diff = 0.0;
  std::string detail;  // per-element mismatches, or the error message
};

GoldenResult replay(const GoldenCase& golden);
std::vector<GoldenResult> replay_goldens(const std::filesystem::path& suite_dir);

}  // namespace hfit
