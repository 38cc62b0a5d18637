#pragma once

// Confusion-matrix segmentation metrics: per-class IoU, F1, precision and
// recall, their means over valid classes, and overall pixel accuracy.
//
// A class is valid when TP + FP + FN > 0. Inside a valid class any 0/0 ratio
// is reported as 0.

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace hfit {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(int64_t classes);

  int64_t classes() const { return classes_; }
  // Entry (g, p): pixels with ground truth g predicted as p.
  int64_t at(int64_t truth, int64_t pred) const { return counts_[truth * classes_ + pred]; }
  int64_t total() const;
  const std::vector<int64_t>& counts() const { return counts_; }

  // pred and label are integer tensors of one shape. Pixels whose label is
  // ignore_index are skipped; other values outside [0, C) raise IndexError.
  void accumulate(const torch::Tensor& pred, const torch::Tensor& label, int64_t ignore_index = 255);
  void merge(const ConfusionMatrix& other);

  bool operator==(const ConfusionMatrix&) const = default;

 private:
  int64_t classes_;
  std::vector<int64_t> counts_;
};

struct ClassMetrics {
  bool valid = false;
  double iou = 0, f1 = 0, precision = 0, recall = 0;
};

struct MetricsReport {
  std::vector<ClassMetrics> per_class;
  double mFsc = 0, mIoU = 0, mPre = 0, mRec = 0, aAcc = 0;
  int64_t valid_classes() const;
};

// ValueError on an empty matrix.
MetricsReport compute(const ConfusionMatrix& cm);

// max - min; ValueError for fewer than two values.
double error_range(const std::vector<double>& values);

// Aligned plain-text table, percentages with two decimals.
std::string format_table(const MetricsReport& report);
// key=value lines: mFsc, mIoU, aAcc, mPre, mRec, per_class.<id>.<metric>.
// Invalid classes print "nan".
std::string format_key_values(const MetricsReport& report);

// Writes metrics.txt and metrics.kv into `dir`.
void write_reports(const MetricsReport& report, const std::filesystem::path& dir);

}  // namespace hfit
