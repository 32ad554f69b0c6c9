#include "karma/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <numeric>
#include <sstream>

#include "karma/error.hpp"

namespace karma {

std::uint64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::uint64_t{0});
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (other.num_classes != num_classes) throw DimensionError("confusion matrices differ in class count");
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                          std::size_t num_classes) {
  if (pred.size() != truth.size()) throw DimensionError("prediction and truth masks differ in size");
  ConfusionMatrix cm(num_classes);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] >= num_classes || truth[i] >= num_classes) {
      throw ArgumentError("label out of range at pixel " + std::to_string(i));
    }
    ++cm.counts[truth[i] * num_classes + pred[i]];
  }
  return cm;
}

SegMetrics compute_metrics(const ConfusionMatrix& cm, const MetricOptions& opt) {
  const std::size_t k = cm.num_classes;
  const double total = static_cast<double>(cm.total());
  if (k == 0 || total == 0.0) throw ArgumentError("compute_metrics on an empty confusion matrix");
  if (opt.background_class >= k) throw ArgumentError("background class out of range");
  SegMetrics m;
  m.per_class_iou.resize(k);
  m.per_class_f1.resize(k);
  m.per_class_mcc.resize(k);
  m.per_class_recall.resize(k);
  std::vector<double> support(k, 0.0);
  double correct = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    double tp = static_cast<double>(cm.at(c, c)), fp = 0.0, fn = 0.0;
    for (std::size_t o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += static_cast<double>(cm.at(o, c));
      fn += static_cast<double>(cm.at(c, o));
    }
    const double tn = total - tp - fp - fn;
    support[c] = tp + fn;
    correct += tp;
    m.per_class_iou[c] = tp + fp + fn > 0 ? tp / (tp + fp + fn) : 0.0;
    m.per_class_f1[c] = tp + fp + fn > 0 ? 2 * tp / (2 * tp + fp + fn) : 0.0;
    m.per_class_recall[c] = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
    if (den > 0.0) m.per_class_mcc[c] = (tp * tn - fp * fn) / std::sqrt(den);
    else m.per_class_mcc[c] = (fp == 0.0 && fn == 0.0) ? 1.0 : 0.0;
  }
  auto average = [&](const std::vector<double>& v, bool skip_bg) {
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (skip_bg && c == opt.background_class) continue;
      if (!opt.include_absent && support[c] == 0.0) continue;
      s += v[c];
      ++n;
    }
    return n ? s / static_cast<double>(n) : 0.0;
  };
  m.miou_with_bg = average(m.per_class_iou, false);
  m.miou_wo_bg = average(m.per_class_iou, true);
  m.f1_with_bg = average(m.per_class_f1, false);
  m.f1_wo_bg = average(m.per_class_f1, true);
  m.balanced_acc = average(m.per_class_recall, false);
  m.mean_mcc = average(m.per_class_mcc, false);
  for (std::size_t c = 0; c < k; ++c) m.fw_iou += support[c] / total * m.per_class_iou[c];
  m.pixel_acc = correct / total;
  return m;
}

std::string SegMetrics::to_kv() const {
  std::ostringstream os;
  os.precision(6);
  os << "miou=" << miou_with_bg << " miou_wo_bg=" << miou_wo_bg << " f1=" << f1_with_bg
     << " f1_wo_bg=" << f1_wo_bg << " balanced_acc=" << balanced_acc << " mcc=" << mean_mcc
     << " fw_iou=" << fw_iou << " pixel_acc=" << pixel_acc;
  for (std::size_t c = 0; c < per_class_iou.size(); ++c) os << " iou_" << c << "=" << per_class_iou[c];
  return os.str();
}

namespace {

constexpr double kT90[30] = {6.314, 2.920, 2.353, 2.132, 2.015, 1.943, 1.895, 1.860, 1.833, 1.812,
                             1.796, 1.782, 1.771, 1.761, 1.753, 1.746, 1.740, 1.734, 1.729, 1.725,
                             1.721, 1.717, 1.714, 1.711, 1.708, 1.706, 1.703, 1.701, 1.699, 1.697};
constexpr double kT95[30] = {12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228,
                             2.201,  2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086,
                             2.080,  2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042};
constexpr double kT99[30] = {63.657, 9.925, 5.841, 4.604, 4.032, 3.707, 3.499, 3.355, 3.250, 3.169,
                             3.106,  3.055, 3.012, 2.977, 2.947, 2.921, 2.898, 2.878, 2.861, 2.845,
                             2.831,  2.819, 2.807, 2.797, 2.787, 2.779, 2.771, 2.763, 2.756, 2.750};

}  // namespace

double t_critical(std::size_t df, double confidence) {
  if (df == 0) throw ArgumentError("t_critical needs df >= 1");
  if (!(confidence > 0.0 && confidence < 1.0)) throw ArgumentError("confidence must be in (0, 1)");
  if (df <= 30) {
    if (confidence == 0.90) return kT90[df - 1];
    if (confidence == 0.95) return kT95[df - 1];
    if (confidence == 0.99) return kT99[df - 1];
  }
  boost::math::students_t dist(static_cast<double>(df));
  return boost::math::quantile(dist, 0.5 + confidence / 2.0);
}

ConfidenceInterval mean_ci(const std::vector<double>& values, double confidence) {
  const std::size_t n = values.size();
  if (n < 2) throw ArgumentError("mean_ci needs at least 2 values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s = std::sqrt(ss / static_cast<double>(n - 1));
  const double half = t_critical(n - 1, confidence) * s / std::sqrt(static_cast<double>(n));
  return {mean, mean - half, mean + half};
}

}  // namespace karma
