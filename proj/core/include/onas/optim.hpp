#pragma once

#include <cmath>
#include <vector>

#include "onas/common.hpp"
#include "onas/layers.hpp"
#include "onas/tensor.hpp"

namespace onas {

// Half-cosine schedule: lr(step) = 0.5 * lr0 * (1 + cos(pi * step / total)).
inline double cosine_lr(std::int64_t step, std::int64_t total_steps, double lr0) {
  if (total_steps <= 0) throw UsageError("cosine_lr: total_steps must be positive");
  if (step < 0 || step > total_steps) throw UsageError("cosine_lr: step out of range");
  return 0.5 * lr0 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                     static_cast<double>(total_steps)));
}

struct SgdConfig {
  double momentum = 0.9;
  double weight_decay = 4e-5;
};

// SGD with momentum over a fixed parameter list:
//   buf   <- momentum * buf + grad + weight_decay * param   (decay only where
//            the ParamRef opts in)
//   param <- param - lr * buf
template <typename T>
class Sgd {
 public:
  Sgd() = default;
  Sgd(std::vector<ParamRef<T>> params, SgdConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    bufs_.reserve(params_.size());
    for (const auto& p : params_) bufs_.push_back(Tensor<T>::zeros(p.value->shape));
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& p = *params_[i].value;
      auto& g = *params_[i].grad;
      auto& buf = bufs_[i];
      if (!p.same_shape(g) || !p.same_shape(buf))
        throw StructuralError("sgd: parameter/gradient shape mismatch");
      const T wd = params_[i].decay ? static_cast<T>(cfg_.weight_decay) : T(0);
      const T mom = static_cast<T>(cfg_.momentum);
      for (std::int64_t j = 0; j < p.size(); ++j) {
        buf.data[j] = mom * buf.data[j] + g.data[j] + wd * p.data[j];
        p.data[j] -= static_cast<T>(lr) * buf.data[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.grad->zero();
  }

  const std::vector<ParamRef<T>>& params() const { return params_; }

 private:
  std::vector<ParamRef<T>> params_;
  std::vector<Tensor<T>> bufs_;
  SgdConfig cfg_;
};

}  // namespace onas
