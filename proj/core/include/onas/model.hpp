#pragma once

#include <memory>
#include <optional>
#include <vector>

#include "onas/layers.hpp"
#include "onas/loss.hpp"
#include "onas/search_space.hpp"

namespace onas {

enum class TaskKind { Classification, Segmentation };

inline const char* task_name(TaskKind t) {
  return t == TaskKind::Classification ? "classification" : "segmentation";
}

struct SegHeadSpec {
  std::vector<int> dilation_rates = {1, 2, 4};
  int fuse_channels = 64;
  int output_stride = 8;
};

struct HeadSpec {
  TaskKind task = TaskKind::Classification;
  int num_classes = 0;
  SegHeadSpec seg;
};

// ---------------------------------------------------------------------------
// MobileNetV2-style inverted residual block with an SE module:
// expand 1x1 -> BN -> act -> depthwise kxk -> BN -> act -> SE -> project 1x1
// -> BN, with a residual connection when stride 1 and C_in == C_out.
template <typename T>
class MBInvRes {
 public:
  MBInvRes(int in_ch, int out_ch, int k, int hidden, int stride, int dilation, Act act)
      : in_ch_(in_ch), out_ch_(out_ch),
        expand(in_ch, hidden, 1), bn1(hidden), a1(act),
        dw(hidden, k, stride, dilation), bn2(hidden), a2(act),
        se(hidden, in_ch),
        project(hidden, out_ch, 1), bn3(out_ch),
        residual_(stride == 1 && in_ch == out_ch) {}

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> t = expand.forward(x, mode);
    t = bn1.forward(t, mode);
    t = a1.forward(t, mode);
    t = dw.forward(t, mode);
    t = bn2.forward(t, mode);
    t = a2.forward(t, mode);
    t = se.forward(t, mode);
    t = project.forward(t, mode);
    t = bn3.forward(t, mode);
    if (residual_) {
      for (std::int64_t i = 0; i < t.size(); ++i) t.data[i] += x.data[i];
    }
    return t;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = bn3.backward(gy);
    g = project.backward(g);
    g = se.backward(g);
    g = a2.backward(g);
    g = bn2.backward(g);
    g = dw.backward(g);
    g = a1.backward(g);
    g = bn1.backward(g);
    g = expand.backward(g);
    if (residual_) {
      for (std::int64_t i = 0; i < g.size(); ++i) g.data[i] += gy.data[i];
    }
    return g;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    expand.collect_params(out);
    bn1.collect_params(out);
    dw.collect_params(out);
    bn2.collect_params(out);
    se.collect_params(out);
    project.collect_params(out);
    bn3.collect_params(out);
  }

  bool residual() const { return residual_; }
  int in_ch() const { return in_ch_; }
  int out_ch() const { return out_ch_; }

  int in_ch_ = 0, out_ch_ = 0;
  Conv2d<T> expand;
  BatchNorm2d<T> bn1;
  Activation<T> a1;
  DepthwiseConv2d<T> dw;
  BatchNorm2d<T> bn2;
  Activation<T> a2;
  SEBlock<T> se;
  Conv2d<T> project;
  BatchNorm2d<T> bn3;

 private:
  bool residual_ = false;
};

// ---------------------------------------------------------------------------
template <typename T>
class Backbone {
 public:
  Conv2d<T> stem_conv;
  BatchNorm2d<T> stem_bn;
  Activation<T> stem_act{Act::ReLU};
  std::optional<MBInvRes<T>> fixed_block;
  std::vector<MBInvRes<T>> blocks;
  int out_channels = 0;
  int out_hw = 0;  // feature side length at the configured input resolution

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> t = stem_conv.forward(x, mode);
    t = stem_bn.forward(t, mode);
    t = stem_act.forward(t, mode);
    if (fixed_block) t = fixed_block->forward(t, mode);
    for (auto& b : blocks) t = b.forward(t, mode);
    return t;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = gy;
    for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) g = it->backward(g);
    if (fixed_block) g = fixed_block->backward(g);
    g = stem_act.backward(g);
    g = stem_bn.backward(g);
    return stem_conv.backward(g);
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    stem_conv.collect_params(out);
    stem_bn.collect_params(out);
    if (fixed_block) fixed_block->collect_params(out);
    for (auto& b : blocks) b.collect_params(out);
  }
};

// ---------------------------------------------------------------------------
// Classification head: 1x1 conv -> BN -> Swish -> global pool -> fc.
template <typename T>
class ClassifierHead {
 public:
  ClassifierHead(int in_ch, int head_ch, int classes)
      : conv(in_ch, head_ch, 1), bn(head_ch), act(Act::Swish), fc(head_ch, classes) {}

  Tensor<T> forward(const Tensor<T>& features, Mode mode) {
    Tensor<T> t = conv.forward(features, mode);
    t = bn.forward(t, mode);
    t = act.forward(t, mode);
    t = gap.forward(t, mode);
    return fc.forward(t, mode);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = fc.backward(gy);
    g = gap.backward(g);
    g = act.backward(g);
    g = bn.backward(g);
    return conv.backward(g);
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    conv.collect_params(out);
    bn.collect_params(out);
    fc.collect_params(out);
  }

  Conv2d<T> conv;
  BatchNorm2d<T> bn;
  Activation<T> act;
  GlobalAvgPool<T> gap;
  Linear<T> fc;
};

// ---------------------------------------------------------------------------
// ASPP segmentation head: parallel dilated depthwise-separable branches plus
// a global-pool branch, concatenated, fused by a 1x1 conv, classified per
// pixel and bilinearly upsampled to the input resolution.
template <typename T>
class SegHead {
 public:
  struct Branch {
    DepthwiseConv2d<T> dw;
    Conv2d<T> pw;
    BatchNorm2d<T> bn;
    Activation<T> act{Act::ReLU};
    Branch(int in_ch, int out_ch, int rate)
        : dw(in_ch, 3, 1, rate), pw(in_ch, out_ch, 1), bn(out_ch) {}
  };

  SegHead(int in_ch, const SegHeadSpec& spec, int classes, int upsample_factor)
      : spec_(spec), classes_(classes),
        gp_fc(in_ch, spec.fuse_channels),
        fuse(static_cast<int>(spec.dilation_rates.size() + 1) * spec.fuse_channels,
             spec.fuse_channels, 1),
        fuse_bn(spec.fuse_channels),
        cls(spec.fuse_channels, classes, 1),
        cls_bias(Tensor<T>::zeros({classes})), gcls_bias(Tensor<T>::zeros({classes})),
        up(upsample_factor) {
    for (int rate : spec.dilation_rates)
      branches.push_back(std::make_unique<Branch>(in_ch, spec.fuse_channels, rate));
  }

  Tensor<T> forward(const Tensor<T>& features, Mode mode) {
    const std::int64_t n = features.dim(0), h = features.dim(2), w = features.dim(3);
    const int cb = spec_.fuse_channels;
    const auto nb = static_cast<std::int64_t>(branches.size());
    Tensor<T> cat({n, (nb + 1) * cb, h, w});
    for (std::int64_t bi = 0; bi < nb; ++bi) {
      auto& br = *branches[static_cast<std::size_t>(bi)];
      Tensor<T> t = br.dw.forward(features, mode);
      t = br.pw.forward(t, mode);
      t = br.bn.forward(t, mode);
      t = br.act.forward(t, mode);
      copy_into(cat, t, bi * cb);
    }
    // global-pool branch
    Tensor<T> z = gp_gap.forward(features, mode);
    z = gp_fc.forward(z, mode);
    gp_relu_cache_ = z;
    Tensor<T> zr(z.shape);
    for (std::int64_t i = 0; i < z.size(); ++i) zr.data[i] = z.data[i] > T(0) ? z.data[i] : T(0);
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < cb; ++c) {
        const T v = zr.at2(i, c);
        for (std::int64_t j = 0; j < h * w; ++j)
          cat.ptr()[((i * (nb + 1) * cb) + nb * cb + c) * h * w + j] = v;
      }
    Tensor<T> t = fuse.forward(cat, mode);
    t = fuse_bn.forward(t, mode);
    t = fuse_act.forward(t, mode);
    t = cls.forward(t, mode);
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < classes_; ++c) {
        T* p = t.ptr() + (i * classes_ + c) * h * w;
        for (std::int64_t j = 0; j < h * w; ++j) p[j] += cls_bias.data[c];
      }
    return up.forward(t, mode);
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = up.backward(gy);
    const std::int64_t n = g.dim(0), h = g.dim(2), w = g.dim(3);
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < classes_; ++c) {
        const T* p = g.ptr() + (i * classes_ + c) * h * w;
        double acc = 0;
        for (std::int64_t j = 0; j < h * w; ++j) acc += p[j];
        gcls_bias.data[c] += static_cast<T>(acc);
      }
    g = cls.backward(g);
    g = fuse_act.backward(g);
    g = fuse_bn.backward(g);
    Tensor<T> gcat = fuse.backward(g);
    const int cb = spec_.fuse_channels;
    const auto nb = static_cast<std::int64_t>(branches.size());
    Tensor<T> gx;
    for (std::int64_t bi = 0; bi < nb; ++bi) {
      auto& br = *branches[static_cast<std::size_t>(bi)];
      Tensor<T> gb = slice_from(gcat, bi * cb, cb);
      gb = br.act.backward(gb);
      gb = br.bn.backward(gb);
      gb = br.pw.backward(gb);
      gb = br.dw.backward(gb);
      if (bi == 0)
        gx = std::move(gb);
      else
        for (std::int64_t i = 0; i < gx.size(); ++i) gx.data[i] += gb.data[i];
    }
    // global branch
    Tensor<T> gz({n, cb});
    Tensor<T> gslice = slice_from(gcat, nb * cb, cb);
    for (std::int64_t i = 0; i < n; ++i)
      for (int c = 0; c < cb; ++c) {
        const T* p = gslice.ptr() + (i * cb + c) * h * w;
        double acc = 0;
        for (std::int64_t j = 0; j < h * w; ++j) acc += p[j];
        gz.at2(i, c) = static_cast<T>(acc);
      }
    for (std::int64_t i = 0; i < gz.size(); ++i)
      if (gp_relu_cache_.data[i] <= T(0)) gz.data[i] = T(0);
    Tensor<T> gfeat = gp_gap.backward(gp_fc.backward(gz));
    for (std::int64_t i = 0; i < gx.size(); ++i) gx.data[i] += gfeat.data[i];
    return gx;
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    for (auto& br : branches) {
      br->dw.collect_params(out);
      br->pw.collect_params(out);
      br->bn.collect_params(out);
    }
    gp_fc.collect_params(out);
    fuse.collect_params(out);
    fuse_bn.collect_params(out);
    cls.collect_params(out);
    out.push_back({&cls_bias, &gcls_bias, false});
  }

  SegHeadSpec spec_;
  int classes_ = 0;
  std::vector<std::unique_ptr<Branch>> branches;
  GlobalAvgPool<T> gp_gap;
  Linear<T> gp_fc;
  Conv2d<T> fuse;
  BatchNorm2d<T> fuse_bn;
  Activation<T> fuse_act{Act::ReLU};
  Conv2d<T> cls;
  Tensor<T> cls_bias, gcls_bias;
  BilinearUpsample<T> up;

 private:
  static void copy_into(Tensor<T>& cat, const Tensor<T>& t, std::int64_t ch_off) {
    const std::int64_t n = t.dim(0), c = t.dim(1), px = t.dim(2) * t.dim(3);
    const std::int64_t cat_c = cat.dim(1);
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        std::copy_n(t.ptr() + (i * c + j) * px, px,
                    cat.ptr() + (i * cat_c + ch_off + j) * px);
  }
  static Tensor<T> slice_from(const Tensor<T>& cat, std::int64_t ch_off, std::int64_t c) {
    const std::int64_t n = cat.dim(0), cat_c = cat.dim(1), h = cat.dim(2), w = cat.dim(3);
    Tensor<T> out({n, c, h, w});
    for (std::int64_t i = 0; i < n; ++i)
      for (std::int64_t j = 0; j < c; ++j)
        std::copy_n(cat.ptr() + (i * cat_c + ch_off + j) * h * w, h * w,
                    out.ptr() + (i * c + j) * h * w);
    return out;
  }

  Tensor<T> gp_relu_cache_;
};

// ---------------------------------------------------------------------------
// A complete runnable model: backbone plus exactly one task head.
template <typename T>
class Model {
 public:
  Backbone<T> backbone;
  std::optional<HeadSpec> head_spec;
  std::unique_ptr<ClassifierHead<T>> cls_head;
  std::unique_ptr<SegHead<T>> seg_head;

  Tensor<T> forward(const Tensor<T>& x, Mode mode) {
    Tensor<T> f = backbone.forward(x, mode);
    if (cls_head) return cls_head->forward(f, mode);
    if (seg_head) return seg_head->forward(f, mode);
    return f;
  }

  Tensor<T> backward(const Tensor<T>& gy) {
    Tensor<T> g = gy;
    if (cls_head)
      g = cls_head->backward(g);
    else if (seg_head)
      g = seg_head->backward(g);
    return backbone.backward(g);
  }

  LossResult<T> loss(const Tensor<T>& logits, const std::vector<int>& labels) const {
    if (cls_head) return softmax_cross_entropy(logits, labels);
    if (seg_head) return pixel_cross_entropy(logits, labels);
    throw UsageError("model: no head attached");
  }

  void collect_params(std::vector<ParamRef<T>>& out) {
    backbone.collect_params(out);
    if (cls_head) cls_head->collect_params(out);
    if (seg_head) seg_head->collect_params(out);
  }
};

// Options controlling backbone construction. When `output_stride_cap` > 0,
// downsampling blocks beyond the cap run at stride 1 and the following
// depthwise convolutions are dilated instead (dense-feature extraction for
// segmentation).
struct BuildOptions {
  int output_stride_cap = 0;
};

// Build the layer objects (weights zero-initialized) for a genotype.
template <typename T>
Model<T> build_model(const SearchSpaceConfig& space, const Genotype& g,
                     const std::optional<HeadSpec>& head, const BuildOptions& opts = {}) {
  validate_genotype(space, g);
  Model<T> m;
  int cum_stride = space.stem.stride;
  int dilation = 1;
  m.backbone.stem_conv = Conv2d<T>(space.input_channels, space.stem.out_channels,
                                   space.stem.kernel, space.stem.stride);
  m.backbone.stem_bn = BatchNorm2d<T>(space.stem.out_channels);
  int ch = space.stem.out_channels;
  int hw = (space.input_resolution + space.stem.stride - 1) / space.stem.stride;
  // Converts a block's stride to dilation once the output-stride cap is hit.
  auto block_stride = [&](int want) {
    if (opts.output_stride_cap > 0 && want > 1 && cum_stride * want > opts.output_stride_cap) {
      dilation *= want;
      return 1;
    }
    cum_stride *= want;
    return want;
  };
  if (space.fixed_block.present) {
    const auto& fb = space.fixed_block;
    const int eff = block_stride(fb.stride);
    m.backbone.fixed_block.emplace(ch, fb.out_channels, fb.kernel,
                                   hidden_channels(ch, fb.expansion), eff, dilation,
                                   Act::ReLU);
    ch = fb.out_channels;
    hw = (hw + eff - 1) / eff;
  }
  const auto infos = layer_infos(space);
  for (std::size_t i = 0; i < infos.size(); ++i) {
    const auto& li = infos[i];
    const auto& gene = g.genes[i];
    const int eff = block_stride(li.stride);
    m.backbone.blocks.emplace_back(ch, li.out_channels, gene.kernel,
                                   hidden_channels(ch, gene.expansion), eff, dilation,
                                   li.activation);
    ch = li.out_channels;
    hw = (hw + eff - 1) / eff;
  }
  m.backbone.out_channels = ch;
  m.backbone.out_hw = hw;
  if (head) {
    m.head_spec = head;
    if (head->task == TaskKind::Classification) {
      m.cls_head = std::make_unique<ClassifierHead<T>>(ch, space.head_channels,
                                                       head->num_classes);
    } else {
      const int factor = space.input_resolution / hw;
      m.seg_head = std::make_unique<SegHead<T>>(ch, head->seg, head->num_classes, factor);
    }
  }
  return m;
}

}  // namespace onas
