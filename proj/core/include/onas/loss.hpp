#pragma once

#include <cmath>
#include <vector>

#include "onas/common.hpp"
#include "onas/tensor.hpp"

namespace onas {

// Mean negative log softmax probability of the true class, plus the gradient
// w.r.t. the logits: (softmax - onehot) / batch_size.
template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;
};

// Classification: logits (N, C), labels[i] in [0, C).
template <typename T>
LossResult<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 2)
    throw StructuralError("softmax_cross_entropy: logits must be (N,C)");
  const std::int64_t n = logits.dim(0), c = logits.dim(1);
  if (static_cast<std::int64_t>(labels.size()) != n)
    throw DataError("softmax_cross_entropy: label count mismatch");
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= c) throw DataError("softmax_cross_entropy: label out of range");
    const T* row = logits.ptr() + i * c;
    T maxv = row[0];
    for (std::int64_t j = 1; j < c; ++j) maxv = std::max(maxv, row[j]);
    double denom = 0;
    for (std::int64_t j = 0; j < c; ++j) denom += std::exp(static_cast<double>(row[j] - maxv));
    const double logz = std::log(denom) + static_cast<double>(maxv);
    total += logz - static_cast<double>(row[label]);
    T* g = r.grad.ptr() + i * c;
    for (std::int64_t j = 0; j < c; ++j) {
      const double p = std::exp(static_cast<double>(row[j]) - logz);
      g[j] = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / static_cast<double>(n));
    }
  }
  r.loss = total / static_cast<double>(n);
  return r;
}

// Segmentation: logits (N, C, H, W), labels as a flat per-pixel map of size
// N*H*W in row-major (n, h, w) order. Loss averages over all pixels.
template <typename T>
LossResult<T> pixel_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  if (logits.shape.size() != 4)
    throw StructuralError("pixel_cross_entropy: logits must be (N,C,H,W)");
  const std::int64_t n = logits.dim(0), c = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  if (static_cast<std::int64_t>(labels.size()) != n * h * w)
    throw DataError("pixel_cross_entropy: label map size mismatch");
  LossResult<T> r;
  r.grad = Tensor<T>(logits.shape);
  const double npix = static_cast<double>(n * h * w);
  double total = 0;
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const int label = labels[static_cast<std::size_t>((i * h + y) * w + x)];
        if (label < 0 || label >= c) throw DataError("pixel_cross_entropy: label out of range");
        T maxv = logits.at4(i, 0, y, x);
        for (std::int64_t j = 1; j < c; ++j) maxv = std::max(maxv, logits.at4(i, j, y, x));
        double denom = 0;
        for (std::int64_t j = 0; j < c; ++j)
          denom += std::exp(static_cast<double>(logits.at4(i, j, y, x) - maxv));
        const double logz = std::log(denom) + static_cast<double>(maxv);
        total += logz - static_cast<double>(logits.at4(i, label, y, x));
        for (std::int64_t j = 0; j < c; ++j) {
          const double p = std::exp(static_cast<double>(logits.at4(i, j, y, x)) - logz);
          r.grad.at4(i, j, y, x) = static_cast<T>((p - (j == label ? 1.0 : 0.0)) / npix);
        }
      }
  r.loss = total / npix;
  return r;
}

}  // namespace onas
