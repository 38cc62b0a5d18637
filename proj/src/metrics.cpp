#include "hfit/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "hfit/errors.hpp"
#include "hfit/layout.hpp"

namespace hfit {

ConfusionMatrix::ConfusionMatrix(int64_t classes)
    : classes_(classes), counts_(static_cast<size_t>(classes * classes), 0) {
  if (classes < 1) throw ValueError("a confusion matrix needs at least one class");
}

int64_t ConfusionMatrix::total() const {
  int64_t sum = 0;
  for (auto v : counts_) sum += v;
  return sum;
}

void ConfusionMatrix::accumulate(const torch::Tensor& pred, const torch::Tensor& label,
                                 int64_t ignore_index) {
  if (pred.sizes() != label.sizes()) {
    throw ShapeError("prediction " + shape_string(pred) + " and label " + shape_string(label) +
                     " differ in shape");
  }
  auto p = pred.to(torch::kLong).contiguous().view(-1);
  auto g = label.to(torch::kLong).contiguous().view(-1);
  const auto* pp = p.data_ptr<int64_t>();
  const auto* gp = g.data_ptr<int64_t>();
  // Validate first so a bad pixel leaves the matrix untouched.
  for (int64_t i = 0; i < g.numel(); ++i) {
    if (gp[i] == ignore_index) continue;
    if (gp[i] < 0 || gp[i] >= classes_ || pp[i] < 0 || pp[i] >= classes_) {
      throw IndexError("class id out of range at pixel " + std::to_string(i) + ": label " +
                       std::to_string(gp[i]) + ", prediction " + std::to_string(pp[i]) +
                       ", classes " + std::to_string(classes_));
    }
  }
  for (int64_t i = 0; i < g.numel(); ++i) {
    if (gp[i] != ignore_index) ++counts_[gp[i] * classes_ + pp[i]];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.classes_ != classes_) {
    throw ShapeError("cannot merge confusion matrices over " + std::to_string(classes_) + " and " +
                     std::to_string(other.classes_) + " classes");
  }
  for (size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

int64_t MetricsReport::valid_classes() const {
  return std::count_if(per_class.begin(), per_class.end(),
                       [](const ClassMetrics& c) { return c.valid; });
}

namespace {

double ratio(double num, double den) { return den > 0 ? num / den : 0.0; }

}  // namespace

MetricsReport compute(const ConfusionMatrix& cm) {
  const auto total = cm.total();
  if (total == 0) throw ValueError("confusion matrix is empty");
  const auto n = cm.classes();
  MetricsReport r;
  r.per_class.resize(n);
  int64_t trace = 0;
  int64_t valid = 0;
  for (int64_t c = 0; c < n; ++c) {
    int64_t row = 0, col = 0;
    for (int64_t k = 0; k < n; ++k) {
      row += cm.at(c, k);
      col += cm.at(k, c);
    }
    const double tp = static_cast<double>(cm.at(c, c));
    const double fp = static_cast<double>(col) - tp;
    const double fn = static_cast<double>(row) - tp;
    trace += cm.at(c, c);
    auto& m = r.per_class[c];
    m.valid = tp + fp + fn > 0;
    if (!m.valid) continue;
    m.iou = tp / (tp + fp + fn);
    m.precision = ratio(tp, tp + fp);
    m.recall = ratio(tp, tp + fn);
    m.f1 = ratio(2 * m.precision * m.recall, m.precision + m.recall);
    r.mIoU += m.iou;
    r.mFsc += m.f1;
    r.mPre += m.precision;
    r.mRec += m.recall;
    ++valid;
  }
  r.mIoU /= valid;
  r.mFsc /= valid;
  r.mPre /= valid;
  r.mRec /= valid;
  r.aAcc = static_cast<double>(trace) / static_cast<double>(total);
  return r;
}

double error_range(const std::vector<double>& values) {
  if (values.size() < 2) throw ValueError("error range needs at least two runs");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  return *hi - *lo;
}

namespace {

std::string pct(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * v;
  return os.str();
}

}  // namespace

std::string format_table(const MetricsReport& report) {
  std::ostringstream os;
  os << std::left << std::setw(8) << "class" << std::right << std::setw(9) << "IoU" << std::setw(9)
     << "F1" << std::setw(9) << "Pre" << std::setw(9) << "Rec" << '\n';
  for (size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    os << std::left << std::setw(8) << c << std::right;
    if (!m.valid) {
      os << std::setw(9) << "-" << std::setw(9) << "-" << std::setw(9) << "-" << std::setw(9)
         << "-" << '\n';
      continue;
    }
    os << std::setw(9) << pct(m.iou) << std::setw(9) << pct(m.f1) << std::setw(9)
       << pct(m.precision) << std::setw(9) << pct(m.recall) << '\n';
  }
  os << '\n';
  os << std::left << std::setw(8) << "mFsc" << std::right << std::setw(9) << pct(report.mFsc) << '\n';
  os << std::left << std::setw(8) << "mIoU" << std::right << std::setw(9) << pct(report.mIoU) << '\n';
  os << std::left << std::setw(8) << "aAcc" << std::right << std::setw(9) << pct(report.aAcc) << '\n';
  os << std::left << std::setw(8) << "mPre" << std::right << std::setw(9) << pct(report.mPre) << '\n';
  os << std::left << std::setw(8) << "mRec" << std::right << std::setw(9) << pct(report.mRec) << '\n';
  return os.str();
}

std::string format_key_values(const MetricsReport& report) {
  std::ostringstream os;
  os << "mFsc=" << pct(report.mFsc) << '\n'
     << "mIoU=" << pct(report.mIoU) << '\n'
     << "aAcc=" << pct(report.aAcc) << '\n'
     << "mPre=" << pct(report.mPre) << '\n'
     << "mRec=" << pct(report.mRec) << '\n';
  for (size_t c = 0; c < report.per_class.size(); ++c) {
    const auto& m = report.per_class[c];
    const std::string key = "per_class." + std::to_string(c) + ".";
    auto value = [&](double v) { return m.valid ? pct(v) : std::string("nan"); };
    os << key << "iou=" << value(m.iou) << '\n'
       << key << "f1=" << value(m.f1) << '\n'
       << key << "precision=" << value(m.precision) << '\n'
       << key << "recall=" << value(m.recall) << '\n';
  }
  return os.str();
}

void write_reports(const MetricsReport& report, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [name, text] :
       {std::pair{"metrics.txt", format_table(report)}, std::pair{"metrics.kv", format_key_values(report)}}) {
    std::ofstream out(dir / name, std::ios::binary);
    if (!out) throw IoError("cannot write '" + (dir / name).string() + "'");
    out << text;
  }
}

}  // namespace hfit
