#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace karma {

/// counts[t * K + p] = pixels of true class t predicted as p.
struct ConfusionMatrix {
  std::size_t num_classes = 0;
  std::vector<std::uint64_t> counts;

  explicit ConfusionMatrix(std::size_t k = 0) : num_classes(k), counts(k * k, 0) {}
  std::uint64_t at(std::size_t t, std::size_t p) const { return counts[t * num_classes + p]; }
  std::uint64_t total() const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

ConfusionMatrix confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                          std::size_t num_classes);

struct SegMetrics {
  std::vector<double> per_class_iou, per_class_f1, per_class_mcc, per_class_recall;
  double miou_with_bg = 0, miou_wo_bg = 0;
  double f1_with_bg = 0, f1_wo_bg = 0;
  double balanced_acc = 0, mean_mcc = 0, fw_iou = 0, pixel_acc = 0;

  /// "key=value" pairs separated by spaces.
  std::string to_kv() const;
};

struct MetricOptions {
  std::size_t background_class = 0;
  /// false: classes with no true pixels are left out of the averages
  /// instead of counting as 0.
  bool include_absent = true;
};

SegMetrics compute_metrics(const ConfusionMatrix& cm, const MetricOptions& opt = {});

struct ConfidenceInterval {
  double mean, lo, hi;
};

/// Two-sided t interval mean +- t_{n-1} s / sqrt(n).
ConfidenceInterval mean_ci(const std::vector<double>& values, double confidence = 0.95);

/// Two-sided critical value t_{df, (1 + confidence) / 2}. Tabulated for
/// df <= 30 at 0.90 / 0.95 / 0.99; otherwise computed.
double t_critical(std::size_t df, double confidence);

}  // namespace karma
