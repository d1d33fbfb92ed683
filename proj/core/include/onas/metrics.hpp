#pragma once

#include <string>
#include <vector>

#include "onas/tensor.hpp"

namespace onas {

// Row = true class, column = predicted class.
struct ConfusionMatrix {
  int num_classes = 0;
  std::vector<std::int64_t> counts;  // num_classes * num_classes

  std::int64_t& at(int truth, int pred) { return counts[static_cast<std::size_t>(truth) * num_classes + pred]; }
  std::int64_t at(int truth, int pred) const { return counts[static_cast<std::size_t>(truth) * num_classes + pred]; }
  std::int64_t total() const;
};

struct MetricReport {
  int num_classes = 0;
  std::int64_t count = 0;            // samples (or pixels) scored
  double overall_accuracy = 0.0;
  double mean_precision = 0.0;       // macro average over classes with predictions
  double mean_f1 = 0.0;
  double mean_iou = 0.0;
  std::vector<double> precision, recall, f1, iou;
  ConfusionMatrix confusion;

  std::string to_json() const;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int num_classes);
MetricReport metrics_from_confusion(const ConfusionMatrix& cm);
MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& labels, int num_classes);

// Argmax over the class axis. (N, C) yields one prediction per row;
// (N, C, H, W) yields one per pixel in row-major (n, h, w) order.
std::vector<int> argmax_predictions(const Tensor<float>& logits);

}  // namespace onas
