#include "onas/metrics.hpp"

#include <numeric>

#include <nlohmann/json.hpp>

#include "onas/common.hpp"

namespace onas {

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

ConfusionMatrix confusion_matrix(const std::vector<int>& predictions,
                                 const std::vector<int>& labels, int num_classes) {
  if (predictions.size() != labels.size())
    throw UsageError("confusion_matrix: " + std::to_string(predictions.size()) +
                     " predictions vs " + std::to_string(labels.size()) + " labels");
  if (num_classes < 2) throw UsageError("confusion_matrix: need at least 2 classes");
  ConfusionMatrix cm;
  cm.num_classes = num_classes;
  cm.counts.assign(static_cast<std::size_t>(num_classes) * num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int t = labels[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw DataError("confusion_matrix: class id out of range at index " + std::to_string(i));
    ++cm.at(t, p);
  }
  return cm;
}

MetricReport metrics_from_confusion(const ConfusionMatrix& cm) {
  const int k = cm.num_classes;
  MetricReport r;
  r.num_classes = k;
  r.confusion = cm;
  r.count = cm.total();
  if (r.count == 0) throw UsageError("metrics_from_confusion: empty confusion matrix");

  std::int64_t correct = 0;
  for (int c = 0; c < k; ++c) correct += cm.at(c, c);
  r.overall_accuracy = static_cast<double>(correct) / static_cast<double>(r.count);

  r.precision.assign(k, 0.0);
  r.recall.assign(k, 0.0);
  r.f1.assign(k, 0.0);
  r.iou.assign(k, 0.0);
  for (int c = 0; c < k; ++c) {
    std::int64_t tp = cm.at(c, c), fp = 0, fn = 0;
    for (int o = 0; o < k; ++o) {
      if (o == c) continue;
      fp += cm.at(o, c);
      fn += cm.at(c, o);
    }
    r.precision[c] = tp + fp > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    r.recall[c] = tp + fn > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    r.f1[c] = r.precision[c] + r.recall[c] > 0
                  ? 2.0 * r.precision[c] * r.recall[c] / (r.precision[c] + r.recall[c])
                  : 0.0;
    r.iou[c] = tp + fp + fn > 0 ? static_cast<double>(tp) / (tp + fp + fn) : 0.0;
  }
  auto mean = [k](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / k;
  };
  r.mean_precision = mean(r.precision);
  r.mean_f1 = mean(r.f1);
  r.mean_iou = mean(r.iou);
  return r;
}

MetricReport compute_metrics(const std::vector<int>& predictions,
                             const std::vector<int>& labels, int num_classes) {
  return metrics_from_confusion(confusion_matrix(predictions, labels, num_classes));
}

std::vector<int> argmax_predictions(const Tensor<float>& logits) {
  std::vector<int> out;
  if (logits.shape.size() == 2) {
    const std::int64_t n = logits.dim(0), c = logits.dim(1);
    out.reserve(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
      const float* row = logits.ptr() + i * c;
      int best = 0;
      for (int j = 1; j < c; ++j)
        if (row[j] > row[best]) best = j;
      out.push_back(best);
    }
    return out;
  }
  if (logits.shape.size() == 4) {
    const std::int64_t n = logits.dim(0), c = logits.dim(1), px = logits.dim(2) * logits.dim(3);
    out.reserve(static_cast<std::size_t>(n * px));
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < px; ++j) {
        const float* base = logits.ptr() + i * c * px + j;
        int best = 0;
        for (int cc = 1; cc < c; ++cc)
          if (base[cc * px] > base[static_cast<std::int64_t>(best) * px]) best = cc;
        out.push_back(best);
      }
    return out;
  }
  throw StructuralError("argmax_predictions: expected (N,C) or (N,C,H,W), got " +
                        logits.shape_str());
}

std::string MetricReport::to_json() const {
  nlohmann::json j;
  j["num_classes"] = num_classes;
  j["count"] = count;
  j["overall_accuracy"] = overall_accuracy;
  j["mean_precision"] = mean_precision;
  j["mean_f1"] = mean_f1;
  j["mean_iou"] = mean_iou;
  j["precision"] = precision;
  j["recall"] = recall;
  j["f1"] = f1;
  j["iou"] = iou;
  j["confusion"] = confusion.counts;
  return j.dump(2);
}

}  // namespace onas
