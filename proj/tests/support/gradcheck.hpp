#pragma once

// Central finite differences against autograd for a scalar loss over a set of
// float64 parameters.

#include <torch/torch.h>

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace hfit::gradcheck {

struct Options {
  int64_t samples = 200;     // sampled parameter entries
  double step = 1e-5;
  double rel_tol = 1e-4;
  double abs_floor = 1e-8;   // differences below this always pass
  uint64_t seed = 0;
};

struct Entry {
  std::string name;
  int64_t index = 0;
  double analytic = 0, numeric = 0;
  bool passed = false;
};

struct Report {
  std::vector<Entry> entries;
  int64_t failures = 0;
  double worst_rel = 0;  // among entries above the absolute floor
};

using NamedParams = std::vector<std::pair<std::string, torch::Tensor>>;

// `loss` must be a pure function of the parameter values. Entries are drawn
// uniformly over all scalar entries of `params`.
Report check(const NamedParams& params, const std::function<torch::Tensor()>& loss,
             const Options& options = {});

bool within(double analytic, double numeric, const Options& options);

}  // namespace hfit::gradcheck
