#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "onas/common.hpp"
#include "onas/tensor.hpp"

namespace onas {

// Reference to one parameter tensor and its gradient accumulator. `decay`
// marks tensors subject to weight decay (conv/linear weights; BN affine
// parameters and biases are exempt).
template <typename T>
struct ParamRef {
  Tensor<T>* value = nullptr;
  Tensor<T>* grad = nullptr;
  bool decay = false;
};

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

template <typename T>
inline void require_finite(const Tensor<T>& t, const char* what) {
  if (!t.all_finite()) throw NumericError(std::string(what) + ": non-finite input");
}

inline std::int64_t conv_out_dim(std::int64_t in, int k, int stride, int pad, int dilation) {
  return (in + 2 * pad - dilation * (static_cast<std::int64_t>(k) - 1) - 1) / stride + 1;
}

// Padding that keeps `out = ceil(in / stride)` for odd kernels ("same").
inline int same_pad(int k, int dilation) { return dilation * (k - 1) / 2; }

// ---------------------------------------------------------------------------
// Standard convolution (used for 1x1 pointwise and the 3x3 stem).
// Weight layout: (C_out, C_in, k, k). No bias; a BN layer always follows.
// Forward/backward via im2col + GEMM.
template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_ch, int out_ch, int k, int stride = 1, int dilation = 1)
      : w(Tensor<T>::zeros({out_ch, in_ch, k, k})),
        gw(Tensor<T>::zeros({out_ch, in_ch, k, k})),
        in_ch_(in_ch), out_ch_(out_ch), k_(k), stride_(stride), dilation_(dilation),
        pad_(same_pad(k, dilation)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    require_finite(x, "conv2d");
    if (x.shape.size() != 4 || x.dim(1) != in_ch_)
      throw StructuralError("conv2d: input " + x.shape_str() + " incompatible with C_in=" +
                            std::to_string(in_ch_));
    const std::int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::int64_t ho = conv_out_dim(h, k_, stride_, pad_, dilation_);
    const std::int64_t wo = conv_out_dim(wd, k_, stride_, pad_, dilation_);
    Tensor<T> y({n, out_ch_, ho, wo});
    const std::int64_t patch = static_cast<std::int64_t>(in_ch_) * k_ * k_;
    col_.assign(static_cast<std::size_t>(patch * ho * wo), T(0));
    ConstMatMap<T> wmat(w.ptr(), out_ch_, patch);
    for (std::int64_t i = 0; i < n; ++i) {
      im2col(x, i, ho, wo);
      ConstMatMap<T> cm(col_.data(), patch, ho * wo);
      MatMap<T> ym(y.ptr() + i * out_ch_ * ho * wo, out_ch_, ho * wo);
      ym.noalias() = wmat * cm;
    }
    if (mode != Mode::Eval) {
      x_cache_ = x;
      cached_ = true;
    }
    ho_ = ho;
    wo_ = wo;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("conv2d: backward without cached forward");
    const Tensor<T>& x = x_cache_;
    const std::int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::int64_t patch = static_cast<std::int64_t>(in_ch_) * k_ * k_;
    Tensor<T> gx({n, in_ch_, h, wd});
    std::vector<T> gcol(static_cast<std::size_t>(patch * ho_ * wo_));
    ConstMatMap<T> wmat(w.ptr(), out_ch_, patch);
    MatMap<T> gwmat(gw.ptr(), out_ch_, patch);
    for (std::int64_t i = 0; i < n; ++i) {
      im2col(x, i, ho_, wo_);
      ConstMatMap<T> cm(col_.data(), patch, ho_ * wo_);
      ConstMatMap<T> gym(gy.ptr() + i * out_ch_ * ho_ * wo_, out_ch_, ho_ * wo_);
      gwmat.noalias() += gym * cm.transpose();
      MatMap<T> gcm(gcol.data(), patch, ho_ * wo_);
      gcm.noalias() = wmat.transpose() * gym;
      col2im(gcol, gx, i, ho_, wo_);
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) { out.push_back({&w, &gw, true}); }

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int dilation() const { return dilation_; }

  Tensor<T> w, gw;

 private:
  void im2col(const Tensor<T>& x, std::int64_t img, std::int64_t ho, std::int64_t wo) {
    const std::int64_t h = x.dim(2), wd = x.dim(3);
    T* col = col_.data();
    for (int c = 0; c < in_ch_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy * stride_ - pad_ + static_cast<std::int64_t>(ky) * dilation_;
            T* dst = col + (((static_cast<std::int64_t>(c) * k_ + ky) * k_ + kx) * ho + oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(dst, dst + wo, T(0));
              continue;
            }
            const T* src = x.ptr() + ((img * in_ch_ + c) * h + iy) * wd;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox * stride_ - pad_ + static_cast<std::int64_t>(kx) * dilation_;
              dst[ox] = (ix >= 0 && ix < wd) ? src[ix] : T(0);
            }
          }
        }
      }
    }
  }

  void col2im(const std::vector<T>& gcol, Tensor<T>& gx, std::int64_t img,
              std::int64_t ho, std::int64_t wo) {
    const std::int64_t h = gx.dim(2), wd = gx.dim(3);
    const T* col = gcol.data();
    for (int c = 0; c < in_ch_; ++c) {
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          for (std::int64_t oy = 0; oy < ho; ++oy) {
            const std::int64_t iy = oy * stride_ - pad_ + static_cast<std::int64_t>(ky) * dilation_;
            if (iy < 0 || iy >= h) continue;
            const T* src = col + (((static_cast<std::int64_t>(c) * k_ + ky) * k_ + kx) * ho + oy) * wo;
            T* dst = gx.ptr() + ((img * in_ch_ + c) * h + iy) * wd;
            for (std::int64_t ox = 0; ox < wo; ++ox) {
              const std::int64_t ix = ox * stride_ - pad_ + static_cast<std::int64_t>(kx) * dilation_;
              if (ix >= 0 && ix < wd) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }

  int in_ch_ = 0, out_ch_ = 0, k_ = 1, stride_ = 1, dilation_ = 1, pad_ = 0;
  std::int64_t ho_ = 0, wo_ = 0;
  Tensor<T> x_cache_;
  std::vector<T> col_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Depthwise convolution. Weight layout: (C, 1, k, k).
template <typename T>
class DepthwiseConv2d {
 public:
  DepthwiseConv2d() = default;
  DepthwiseConv2d(int ch, int k, int stride = 1, int dilation = 1)
      : w(Tensor<T>::zeros({ch, 1, k, k})), gw(Tensor<T>::zeros({ch, 1, k, k})),
        ch_(ch), k_(k), stride_(stride), dilation_(dilation), pad_(same_pad(k, dilation)) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    require_finite(x, "depthwise_conv2d");
    if (x.shape.size() != 4 || x.dim(1) != ch_)
      throw StructuralError("depthwise_conv2d: input " + x.shape_str() +
                            " incompatible with C=" + std::to_string(ch_));
    const std::int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::int64_t ho = conv_out_dim(h, k_, stride_, pad_, dilation_);
    const std::int64_t wo = conv_out_dim(wd, k_, stride_, pad_, dilation_);
    Tensor<T> y({n, ch_, ho, wo});
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < ch_; ++c) {
        const T* xw = x.ptr() + (i * ch_ + c) * h * wd;
        const T* ker = w.ptr() + static_cast<std::int64_t>(c) * k_ * k_;
        T* yw = y.ptr() + (i * ch_ + c) * ho * wo;
        for (std::int64_t oy = 0; oy < ho; ++oy)
          for (std::int64_t ox = 0; ox < wo; ++ox) {
            T acc = 0;
            for (int ky = 0; ky < k_; ++ky) {
              const std::int64_t iy = oy * stride_ - pad_ + static_cast<std::int64_t>(ky) * dilation_;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const std::int64_t ix = ox * stride_ - pad_ + static_cast<std::int64_t>(kx) * dilation_;
                if (ix < 0 || ix >= wd) continue;
                acc += ker[ky * k_ + kx] * xw[iy * wd + ix];
              }
            }
            yw[oy * wo + ox] = acc;
          }
      }
    if (mode != Mode::Eval) {
      x_cache_ = x;
      cached_ = true;
    }
    ho_ = ho;
    wo_ = wo;
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("depthwise_conv2d: backward without cached forward");
    const Tensor<T>& x = x_cache_;
    const std::int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    Tensor<T> gx({n, ch_, h, wd});
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < ch_; ++c) {
        const T* xw = x.ptr() + (i * ch_ + c) * h * wd;
        const T* ker = w.ptr() + static_cast<std::int64_t>(c) * k_ * k_;
        T* gker = gw.ptr() + static_cast<std::int64_t>(c) * k_ * k_;
        const T* gyw = gy.ptr() + (i * ch_ + c) * ho_ * wo_;
        T* gxw = gx.ptr() + (i * ch_ + c) * h * wd;
        for (std::int64_t oy = 0; oy < ho_; ++oy)
          for (std::int64_t ox = 0; ox < wo_; ++ox) {
            const T g = gyw[oy * wo_ + ox];
            for (int ky = 0; ky < k_; ++ky) {
              const std::int64_t iy = oy * stride_ - pad_ + static_cast<std::int64_t>(ky) * dilation_;
              if (iy < 0 || iy >= h) continue;
              for (int kx = 0; kx < k_; ++kx) {
                const std::int64_t ix = ox * stride_ - pad_ + static_cast<std::int64_t>(kx) * dilation_;
                if (ix < 0 || ix >= wd) continue;
                gker[ky * k_ + kx] += g * xw[iy * wd + ix];
                gxw[iy * wd + ix] += g * ker[ky * k_ + kx];
              }
            }
          }
      }
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) { out.push_back({&w, &gw, true}); }

  int channels() const { return ch_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int dilation() const { return dilation_; }

  Tensor<T> w, gw;

 private:
  int ch_ = 0, k_ = 1, stride_ = 1, dilation_ = 1, pad_ = 0;
  std::int64_t ho_ = 0, wo_ = 0;
  Tensor<T> x_cache_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Batch normalization over NCHW, per-channel statistics.
//  Train:       normalize with batch stats, EMA update of running stats.
//  Eval:        normalize with running stats (deterministic affine map).
//  StatCollect: normalize with batch stats, fold them into the running stats
//               with a cumulative average (recalibration).
template <typename T>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int ch)
      : gamma(Tensor<T>::full({ch}, T(1))), beta(Tensor<T>::zeros({ch})),
        running_mean(Tensor<T>::zeros({ch})), running_var(Tensor<T>::full({ch}, T(1))),
        ggamma(Tensor<T>::zeros({ch})), gbeta(Tensor<T>::zeros({ch})), ch_(ch) {}

  void reset_stats() {
    running_mean.zero();
    std::fill(running_var.data.begin(), running_var.data.end(), T(1));
    stat_batches_ = 0;
  }

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    require_finite(x, "batch_norm");
    if (x.shape.size() != 4 || x.dim(1) != ch_)
      throw StructuralError("batch_norm: input " + x.shape_str() + " incompatible with C=" +
                            std::to_string(ch_));
    const std::int64_t n = x.dim(0), h = x.dim(2), wd = x.dim(3);
    const std::int64_t m = n * h * wd;
    Tensor<T> y(x.shape);
    if (mode == Mode::Eval) {
      for (int c = 0; c < ch_; ++c) {
        const T inv = T(1) / std::sqrt(running_var.data[c] + T(kEps));
        const T a = gamma.data[c] * inv;
        const T b = beta.data[c] - a * running_mean.data[c];
        for (std::int64_t i = 0; i < n; ++i) {
          const T* xs = x.ptr() + (i * ch_ + c) * h * wd;
          T* ys = y.ptr() + (i * ch_ + c) * h * wd;
          for (std::int64_t j = 0; j < h * wd; ++j) ys[j] = a * xs[j] + b;
        }
      }
      cached_ = false;
      return y;
    }
    batch_mean_.assign(ch_, T(0));
    batch_var_.assign(ch_, T(0));
    for (int c = 0; c < ch_; ++c) {
      double sum = 0, sq = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* xs = x.ptr() + (i * ch_ + c) * h * wd;
        for (std::int64_t j = 0; j < h * wd; ++j) {
          sum += xs[j];
          sq += static_cast<double>(xs[j]) * xs[j];
        }
      }
      const double mean = sum / static_cast<double>(m);
      batch_mean_[c] = static_cast<T>(mean);
      batch_var_[c] = static_cast<T>(std::max(0.0, sq / static_cast<double>(m) - mean * mean));
    }
    if (mode == Mode::Train) {
      for (int c = 0; c < ch_; ++c) {
        running_mean.data[c] = static_cast<T>((1 - kMomentum) * running_mean.data[c] +
                                              kMomentum * batch_mean_[c]);
        running_var.data[c] = static_cast<T>((1 - kMomentum) * running_var.data[c] +
                                             kMomentum * batch_var_[c]);
      }
    } else {  // StatCollect: cumulative average starting from the last reset.
      const double w_new = 1.0 / static_cast<double>(stat_batches_ + 1);
      for (int c = 0; c < ch_; ++c) {
        running_mean.data[c] = static_cast<T>((1 - w_new) * running_mean.data[c] +
                                              w_new * batch_mean_[c]);
        running_var.data[c] = static_cast<T>((1 - w_new) * running_var.data[c] +
                                             w_new * batch_var_[c]);
      }
      ++stat_batches_;
    }
    xhat_ = Tensor<T>(x.shape);
    invstd_.assign(ch_, T(0));
    for (int c = 0; c < ch_; ++c) {
      const T inv = T(1) / std::sqrt(batch_var_[c] + T(kEps));
      invstd_[c] = inv;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* xs = x.ptr() + (i * ch_ + c) * h * wd;
        T* xh = xhat_.ptr() + (i * ch_ + c) * h * wd;
        T* ys = y.ptr() + (i * ch_ + c) * h * wd;
        for (std::int64_t j = 0; j < h * wd; ++j) {
          xh[j] = (xs[j] - batch_mean_[c]) * inv;
          ys[j] = gamma.data[c] * xh[j] + beta.data[c];
        }
      }
    }
    cached_ = (mode == Mode::Train);
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("batch_norm: backward without cached train forward");
    const std::int64_t n = gy.dim(0), h = gy.dim(2), wd = gy.dim(3);
    const std::int64_t m = n * h * wd;
    Tensor<T> gx(gy.shape);
    for (int c = 0; c < ch_; ++c) {
      double sum_gy = 0, sum_gy_xhat = 0;
      for (std::int64_t i = 0; i < n; ++i) {
        const T* gys = gy.ptr() + (i * ch_ + c) * h * wd;
        const T* xh = xhat_.ptr() + (i * ch_ + c) * h * wd;
        for (std::int64_t j = 0; j < h * wd; ++j) {
          sum_gy += gys[j];
          sum_gy_xhat += static_cast<double>(gys[j]) * xh[j];
        }
      }
      ggamma.data[c] += static_cast<T>(sum_gy_xhat);
      gbeta.data[c] += static_cast<T>(sum_gy);
      const T scale = gamma.data[c] * invstd_[c] / static_cast<T>(m);
      for (std::int64_t i = 0; i < n; ++i) {
        const T* gys = gy.ptr() + (i * ch_ + c) * h * wd;
        const T* xh = xhat_.ptr() + (i * ch_ + c) * h * wd;
        T* gxs = gx.ptr() + (i * ch_ + c) * h * wd;
        for (std::int64_t j = 0; j < h * wd; ++j)
          gxs[j] = scale * (static_cast<T>(m) * gys[j] - static_cast<T>(sum_gy) -
                            xh[j] * static_cast<T>(sum_gy_xhat));
      }
    }
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({&gamma, &ggamma, false});
    out.push_back({&beta, &gbeta, false});
  }

  int channels() const { return ch_; }

  Tensor<T> gamma, beta, running_mean, running_var, ggamma, gbeta;

 private:
  int ch_ = 0;
  std::int64_t stat_batches_ = 0;
  std::vector<T> batch_mean_, batch_var_, invstd_;
  Tensor<T> xhat_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Activations.
enum class Act { ReLU, Swish };

inline const char* act_name(Act a) { return a == Act::ReLU ? "relu" : "swish"; }

template <typename T>
class Activation {
 public:
  Activation() = default;
  explicit Activation(Act kind) : kind_(kind) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> y(x.shape);
    if (kind_ == Act::ReLU) {
      for (std::int64_t i = 0; i < x.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
    } else {
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x.data[i]));
        y.data[i] = x.data[i] * s;
      }
    }
    if (mode != Mode::Eval) {
      x_cache_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("activation: backward without cached forward");
    Tensor<T> gx(gy.shape);
    if (kind_ == Act::ReLU) {
      for (std::int64_t i = 0; i < gy.size(); ++i)
        gx.data[i] = x_cache_.data[i] > T(0) ? gy.data[i] : T(0);
    } else {
      for (std::int64_t i = 0; i < gy.size(); ++i) {
        const T s = T(1) / (T(1) + std::exp(-x_cache_.data[i]));
        gx.data[i] = gy.data[i] * s * (T(1) + x_cache_.data[i] * (T(1) - s));
      }
    }
    return gx;
  }

  Act kind() const { return kind_; }

 private:
  Act kind_ = Act::ReLU;
  Tensor<T> x_cache_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Global average pool: (N,C,H,W) -> (N,C).
template <typename T>
class GlobalAvgPool {
 public:
  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor<T> y({n, c});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        double s = 0;
        const T* xs = x.ptr() + (i * c + j) * h * w;
        for (std::int64_t k = 0; k < h * w; ++k) s += xs[k];
        y.at2(i, j) = static_cast<T>(s / static_cast<double>(h * w));
      }
    if (mode != Mode::Eval) {
      in_shape_ = x.shape;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("global_avg_pool: backward without cached forward");
    const std::int64_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    Tensor<T> gx(in_shape_);
    const T inv = T(1) / static_cast<T>(h * w);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        T* gxs = gx.ptr() + (i * c + j) * h * w;
        const T g = gy.at2(i, j) * inv;
        for (std::int64_t k = 0; k < h * w; ++k) gxs[k] = g;
      }
    return gx;
  }

 private:
  std::vector<std::int64_t> in_shape_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Fully connected: (N,C_in) -> (N,C_out). Weight (C_out, C_in), bias (C_out).
template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(int in_ch, int out_ch)
      : w(Tensor<T>::zeros({out_ch, in_ch})), b(Tensor<T>::zeros({out_ch})),
        gw(Tensor<T>::zeros({out_ch, in_ch})), gb(Tensor<T>::zeros({out_ch})),
        in_ch_(in_ch), out_ch_(out_ch) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    require_finite(x, "linear");
    if (x.shape.size() != 2 || x.dim(1) != in_ch_)
      throw StructuralError("linear: input " + x.shape_str() + " incompatible with C_in=" +
                            std::to_string(in_ch_));
    const std::int64_t n = x.dim(0);
    Tensor<T> y({n, out_ch_});
    ConstMatMap<T> xm(x.ptr(), n, in_ch_);
    ConstMatMap<T> wm(w.ptr(), out_ch_, in_ch_);
    MatMap<T> ym(y.ptr(), n, out_ch_);
    ym.noalias() = xm * wm.transpose();
    for (std::int64_t i = 0; i < n; ++i)
      for (int j = 0; j < out_ch_; ++j) y.at2(i, j) += b.data[j];
    if (mode != Mode::Eval) {
      x_cache_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("linear: backward without cached forward");
    const std::int64_t n = x_cache_.dim(0);
    Tensor<T> gx({n, in_ch_});
    ConstMatMap<T> xm(x_cache_.ptr(), n, in_ch_);
    ConstMatMap<T> wm(w.ptr(), out_ch_, in_ch_);
    ConstMatMap<T> gym(gy.ptr(), n, out_ch_);
    MatMap<T> gxm(gx.ptr(), n, in_ch_);
    MatMap<T> gwm(gw.ptr(), out_ch_, in_ch_);
    gwm.noalias() += gym.transpose() * xm;
    gxm.noalias() = gym * wm;
    for (std::int64_t i = 0; i < n; ++i)
      for (int j = 0; j < out_ch_; ++j) gb.data[j] += gy.at2(i, j);
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    out.push_back({&w, &gw, true});
    out.push_back({&b, &gb, false});
  }

  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }

  Tensor<T> w, b, gw, gb;

 private:
  int in_ch_ = 0, out_ch_ = 0;
  Tensor<T> x_cache_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Squeeze-and-Excitation: global pool -> linear reduce -> ReLU -> linear
// expand -> sigmoid -> channelwise scale. The bottleneck width is fixed per
// block (independent of the active expansion width), which keeps channel
// slicing confined to the fc weight matrices.
template <typename T>
class SEBlock {
 public:
  SEBlock() = default;
  SEBlock(int ch, int reduced)
      : fc1(ch, reduced), fc2(reduced, ch), ch_(ch), red_(reduced) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    if (c != ch_) throw StructuralError("se_block: channel mismatch");
    Tensor<T> z = gap_.forward(x, mode);
    Tensor<T> hzero = fc1.forward(z, mode);
    relu_cache_ = hzero;
    Tensor<T> hr(hzero.shape);
    for (std::int64_t i = 0; i < hzero.size(); ++i)
      hr.data[i] = hzero.data[i] > T(0) ? hzero.data[i] : T(0);
    Tensor<T> u = fc2.forward(hr, mode);
    s_ = Tensor<T>(u.shape);
    for (std::int64_t i = 0; i < u.size(); ++i)
      s_.data[i] = T(1) / (T(1) + std::exp(-u.data[i]));
    Tensor<T> y(x.shape);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        const T sc = s_.at2(i, j);
        const T* xs = x.ptr() + (i * c + j) * h * w;
        T* ys = y.ptr() + (i * c + j) * h * w;
        for (std::int64_t k = 0; k < h * w; ++k) ys[k] = xs[k] * sc;
      }
    if (mode != Mode::Eval) {
      x_cache_ = x;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("se_block: backward without cached forward");
    const std::int64_t n = x_cache_.dim(0), c = x_cache_.dim(1), h = x_cache_.dim(2),
                       w = x_cache_.dim(3);
    Tensor<T> gx(x_cache_.shape);
    Tensor<T> gs({n, c});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j) {
        const T sc = s_.at2(i, j);
        const T* xs = x_cache_.ptr() + (i * c + j) * h * w;
        const T* gys = gy.ptr() + (i * c + j) * h * w;
        T* gxs = gx.ptr() + (i * c + j) * h * w;
        double acc = 0;
        for (std::int64_t k = 0; k < h * w; ++k) {
          gxs[k] = gys[k] * sc;
          acc += static_cast<double>(gys[k]) * xs[k];
        }
        gs.at2(i, j) = static_cast<T>(acc);
      }
    // through sigmoid
    Tensor<T> gu(gs.shape);
    for (std::int64_t i = 0; i < gs.size(); ++i) {
      const T sc = s_.data[i];
      gu.data[i] = gs.data[i] * sc * (T(1) - sc);
    }
    Tensor<T> ghr = fc2.backward(gu);
    Tensor<T> gh(ghr.shape);
    for (std::int64_t i = 0; i < ghr.size(); ++i)
      gh.data[i] = relu_cache_.data[i] > T(0) ? ghr.data[i] : T(0);
    Tensor<T> gz = fc1.backward(gh);
    Tensor<T> gpool = gap_.backward(gz);
    for (std::int64_t i = 0; i < gx.size(); ++i) gx.data[i] += gpool.data[i];
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    fc1.collect_params(out);
    fc2.collect_params(out);
  }

  int channels() const { return ch_; }
  int reduced() const { return red_; }

  Linear<T> fc1, fc2;

 private:
  int ch_ = 0, red_ = 0;
  GlobalAvgPool<T> gap_;
  Tensor<T> x_cache_, relu_cache_, s_;
  bool cached_ = false;
};

// ---------------------------------------------------------------------------
// Bilinear upsampling by an integer factor (half-pixel alignment).
template <typename T>
class BilinearUpsample {
 public:
  BilinearUpsample() = default;
  explicit BilinearUpsample(int factor) : factor_(factor) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    const std::int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::int64_t ho = h * factor_, wo = w * factor_;
    Tensor<T> y({n, c, ho, wo});
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      const auto [y0, y1, wy] = src_coords(oy, h);
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        const auto [x0, x1, wx] = src_coords(ox, w);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            const T* xs = x.ptr() + (i * c + j) * h * w;
            const T v = static_cast<T>((1 - wy) * ((1 - wx) * xs[y0 * w + x0] + wx * xs[y0 * w + x1]) +
                                       wy * ((1 - wx) * xs[y1 * w + x0] + wx * xs[y1 * w + x1]));
            y.at4(i, j, oy, ox) = v;
          }
      }
    }
    if (mode != Mode::Eval) {
      in_shape_ = x.shape;
      cached_ = true;
    }
    return y;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    if (!cached_) throw UsageError("bilinear_upsample: backward without cached forward");
    const std::int64_t n = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
    const std::int64_t ho = h * factor_, wo = w * factor_;
    Tensor<T> gx(in_shape_);
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      const auto [y0, y1, wy] = src_coords(oy, h);
      for (std::int64_t ox = 0; ox < wo; ++ox) {
        const auto [x0, x1, wx] = src_coords(ox, w);
        for (std::int64_t i = 0; i < n; ++i)
          for (std::int64_t j = 0; j < c; ++j) {
            T* gxs = gx.ptr() + (i * c + j) * h * w;
            const T g = gy.at4(i, j, oy, ox);
            gxs[y0 * w + x0] += static_cast<T>((1 - wy) * (1 - wx)) * g;
            gxs[y0 * w + x1] += static_cast<T>((1 - wy) * wx) * g;
            gxs[y1 * w + x0] += static_cast<T>(wy * (1 - wx)) * g;
            gxs[y1 * w + x1] += static_cast<T>(wy * wx) * g;
          }
      }
    }
    return gx;
  }

  int factor() const { return factor_; }

 private:
  struct Coords {
    std::int64_t lo, hi;
    double frac;
  };
  Coords src_coords(std::int64_t out, std::int64_t in_dim) const {
    double src = (static_cast<double>(out) + 0.5) / factor_ - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_dim - 1));
    const auto lo = static_cast<std::int64_t>(std::floor(src));
    const auto hi = std::min(lo + 1, in_dim - 1);
    return {lo, hi, src - static_cast<double>(lo)};
  }

  int factor_ = 1;
  std::vector<std::int64_t> in_shape_;
  bool cached_ = false;
};

}  // namespace onas
