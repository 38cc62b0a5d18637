#include "oracles.hpp"

#include <algorithm>
#include <cmath>

namespace hfit::oracle {

Plane bilinear(const Plane& in, int64_t out_h, int64_t out_w) {
  Plane out{out_h, out_w, std::vector<double>(static_cast<size_t>(out_h * out_w))};
  const double sy = static_cast<double>(in.h) / out_h;
  const double sx = static_cast<double>(in.w) / out_w;
  for (int64_t y = 0; y < out_h; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const int64_t y0 = std::min(static_cast<int64_t>(std::floor(fy)), in.h - 1);
    const int64_t y1 = std::min(y0 + 1, in.h - 1);
    const double ty = fy - y0;
    for (int64_t x = 0; x < out_w; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const int64_t x0 = std::min(static_cast<int64_t>(std::floor(fx)), in.w - 1);
      const int64_t x1 = std::min(x0 + 1, in.w - 1);
      const double tx = fx - x0;
      const double top = (1 - tx) * in.at(y0, x0) + tx * in.at(y0, x1);
      const double bottom = (1 - tx) * in.at(y1, x0) + tx * in.at(y1, x1);
      out.v[static_cast<size_t>(y * out_w + x)] = (1 - ty) * top + ty * bottom;
    }
  }
  return out;
}

Counts count_pixels(const std::vector<int64_t>& pred, const std::vector<int64_t>& label,
                    int64_t classes, int64_t ignore) {
  Counts c{classes, std::vector<int64_t>(static_cast<size_t>(classes * classes), 0)};
  for (size_t i = 0; i < pred.size(); ++i) {
    if (label[i] == ignore) continue;
    ++c.cm[static_cast<size_t>(label[i] * classes + pred[i])];
  }
  return c;
}

Scores score(const Counts& counts) {
  const int64_t n = counts.classes;
  Scores s;
  int64_t correct = 0, total = 0, valid = 0;
  for (int64_t k = 0; k < n; ++k) {
    int64_t tp = 0, fp = 0, fn = 0;
    for (int64_t j = 0; j < n; ++j) {
      const int64_t kj = counts.cm[static_cast<size_t>(k * n + j)];
      const int64_t jk = counts.cm[static_cast<size_t>(j * n + k)];
      total += kj;
      if (j == k) {
        tp = kj;
      } else {
        fn += kj;
        fp += jk;
      }
    }
    correct += tp;
    auto ratio = [](int64_t a, int64_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / b; };
    const bool is_valid = tp + fp + fn > 0;
    const double pre = ratio(tp, tp + fp), rec = ratio(tp, tp + fn);
    const double iou = ratio(tp, tp + fp + fn);
    const double f1 = ratio(2 * tp, 2 * tp + fp + fn);
    s.valid.push_back(is_valid);
    s.iou.push_back(iou);
    s.f1.push_back(f1);
    s.precision.push_back(pre);
    s.recall.push_back(rec);
    if (is_valid) {
      ++valid;
      s.mIoU += iou;
      s.mFsc += f1;
      s.mPre += pre;
      s.mRec += rec;
    }
  }
  if (valid > 0) {
    s.mIoU /= valid;
    s.mFsc /= valid;
    s.mPre /= valid;
    s.mRec /= valid;
  }
  s.aAcc = total == 0 ? 0.0 : static_cast<double>(correct) / total;
  return s;
}

std::vector<double> integrate(const std::vector<double>& f, const std::vector<double>& g,
                              const std::vector<std::vector<double>>& hist_f,
                              const std::vector<std::vector<double>>& hist_g) {
  std::vector<double> out(f.size());
  for (size_t i = 0; i < f.size(); ++i) {
    double acc = 0;
    for (size_t l = 0; l < hist_f.size(); ++l) acc += hist_g[l][i] * hist_f[l][i];
    out[i] = (1 + g[i]) * f[i] + (1 - g[i]) * acc;
  }
  return out;
}

}  // namespace hfit::oracle
