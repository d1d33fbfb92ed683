#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "onas/model.hpp"
#include "onas/optim.hpp"
#include "onas/rng.hpp"
#include "onas/search_space.hpp"

namespace onas {

struct CheckpointVersionError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointHashError : CheckpointError {
  using CheckpointError::CheckpointError;
};
struct CheckpointTruncatedError : CheckpointError {
  using CheckpointError::CheckpointError;
};

// ---------------------------------------------------------------------------
// Parameter containers. Every (layer, kernel) slot is allocated at maximal
// width; narrower subnets use leading-channel (prefix) slices.

template <typename T>
struct BnParams {
  Tensor<T> gamma, beta, mean, var;
  BnParams() = default;
  explicit BnParams(int ch)
      : gamma(Tensor<T>::full({ch}, T(1))), beta(Tensor<T>::zeros({ch})),
        mean(Tensor<T>::zeros({ch})), var(Tensor<T>::full({ch}, T(1))) {}
};

template <typename T>
struct BlockSlotParams {
  int in_ch = 0, out_ch = 0, kernel = 3, max_hidden = 0, se_red = 0;
  Tensor<T> expand_w;
  BnParams<T> bn1;
  Tensor<T> dw_w;
  BnParams<T> bn2;
  Tensor<T> se1_w, se1_b, se2_w, se2_b;
  Tensor<T> proj_w;
  BnParams<T> bn3;

  BlockSlotParams() = default;
  BlockSlotParams(int in_ch_, int out_ch_, int kernel_, int max_hidden_)
      : in_ch(in_ch_), out_ch(out_ch_), kernel(kernel_), max_hidden(max_hidden_),
        se_red(in_ch_),
        expand_w(Tensor<T>::zeros({max_hidden_, in_ch_, 1, 1})), bn1(max_hidden_),
        dw_w(Tensor<T>::zeros({max_hidden_, 1, kernel_, kernel_})), bn2(max_hidden_),
        se1_w(Tensor<T>::zeros({in_ch_, max_hidden_})), se1_b(Tensor<T>::zeros({in_ch_})),
        se2_w(Tensor<T>::zeros({max_hidden_, in_ch_})), se2_b(Tensor<T>::zeros({max_hidden_})),
        proj_w(Tensor<T>::zeros({out_ch_, max_hidden_, 1, 1})), bn3(out_ch_) {}
};

template <typename T>
struct StemParams {
  Tensor<T> conv_w;
  BnParams<T> bn;
};

template <typename T>
struct ClsHeadParams {
  Tensor<T> conv_w;
  BnParams<T> bn;
  Tensor<T> fc_w, fc_b;
};

template <typename T>
struct SegBranchParams {
  Tensor<T> dw_w, pw_w;
  BnParams<T> bn;
};

template <typename T>
struct SegHeadParams {
  std::vector<SegBranchParams<T>> branches;
  Tensor<T> gp_w, gp_b;
  Tensor<T> fuse_w;
  BnParams<T> fuse_bn;
  Tensor<T> cls_w, cls_b;
};

// Stage tags recorded in the store and enforced across pipeline stages.
namespace stage {
inline constexpr const char* kInitialized = "initialized";
inline constexpr const char* kPretrained = "pretrained";
inline std::string finetuned(TaskKind t) { return std::string("finetuned:") + task_name(t); }
}  // namespace stage

// Shared supernet weights: one full-width block slot per (searchable layer,
// kernel choice), plus fixed stem/head parameters.
template <typename T>
struct WeightStore {
  SearchSpaceConfig space;
  std::string stage_tag = stage::kInitialized;
  std::uint64_t seed = 0;
  std::string parent_hash;  // blob hash of the checkpoint this was loaded from

  StemParams<T> stem;
  std::optional<BlockSlotParams<T>> fixed;
  std::vector<std::vector<BlockSlotParams<T>>> layers;  // [layer][kernel choice idx]
  std::optional<HeadSpec> head;
  std::optional<ClsHeadParams<T>> cls_head;
  std::optional<SegHeadParams<T>> seg_head;

  int kernel_index(int kernel) const {
    for (std::size_t i = 0; i < space.kernel_choices.size(); ++i)
      if (space.kernel_choices[i] == kernel) return static_cast<int>(i);
    throw StructuralError("kernel " + std::to_string(kernel) + " not in space");
  }
};

// ---------------------------------------------------------------------------
// Named-tensor traversal. The visit order is the canonical serialization
// order of checkpoints; it must stay stable.

enum class TensorKind { Weight, Bias, Gamma, Beta, Mean, Var };

struct TensorMeta {
  TensorKind kind = TensorKind::Weight;
  int slice_axis = -1;        // axis sliced by the active width, -1 = never sliced
  std::int64_t fan_in = 0;    // for weight init
  bool is_stat() const { return kind == TensorKind::Mean || kind == TensorKind::Var; }
  bool decay() const { return kind == TensorKind::Weight; }
};

template <typename T, typename F>
void visit_bn(const std::string& prefix, BnParams<T>& bn, int slice_axis, F&& fn) {
  fn(prefix + ".gamma", bn.gamma, TensorMeta{TensorKind::Gamma, slice_axis, 0});
  fn(prefix + ".beta", bn.beta, TensorMeta{TensorKind::Beta, slice_axis, 0});
  fn(prefix + ".mean", bn.mean, TensorMeta{TensorKind::Mean, slice_axis, 0});
  fn(prefix + ".var", bn.var, TensorMeta{TensorKind::Var, slice_axis, 0});
}

template <typename T, typename F>
void visit_slot(const std::string& prefix, BlockSlotParams<T>& s, F&& fn) {
  fn(prefix + ".expand.w", s.expand_w, TensorMeta{TensorKind::Weight, 0, s.in_ch});
  visit_bn(prefix + ".bn1", s.bn1, 0, fn);
  fn(prefix + ".dw.w", s.dw_w,
     TensorMeta{TensorKind::Weight, 0, static_cast<std::int64_t>(s.kernel) * s.kernel});
  visit_bn(prefix + ".bn2", s.bn2, 0, fn);
  fn(prefix + ".se.fc1.w", s.se1_w, TensorMeta{TensorKind::Weight, 1, s.max_hidden});
  fn(prefix + ".se.fc1.b", s.se1_b, TensorMeta{TensorKind::Bias, -1, 0});
  fn(prefix + ".se.fc2.w", s.se2_w, TensorMeta{TensorKind::Weight, 0, s.se_red});
  fn(prefix + ".se.fc2.b", s.se2_b, TensorMeta{TensorKind::Bias, 0, 0});
  fn(prefix + ".proj.w", s.proj_w, TensorMeta{TensorKind::Weight, 1, s.max_hidden});
  visit_bn(prefix + ".bn3", s.bn3, -1, fn);
}

template <typename T, typename F>
void for_each_named_tensor(WeightStore<T>& store, F&& fn) {
  const auto& sp = store.space;
  fn("stem.conv.w", store.stem.conv_w,
     TensorMeta{TensorKind::Weight, -1,
                static_cast<std::int64_t>(sp.stem.kernel) * sp.stem.kernel * sp.input_channels});
  visit_bn("stem.bn", store.stem.bn, -1, fn);
  if (store.fixed) visit_slot("fixed", *store.fixed, fn);
  for (std::size_t l = 0; l < store.layers.size(); ++l)
    for (std::size_t k = 0; k < store.layers[l].size(); ++k)
      visit_slot("l" + std::to_string(l) + ".k" + std::to_string(sp.kernel_choices[k]),
                 store.layers[l][k], fn);
  if (store.cls_head) {
    auto& h = *store.cls_head;
    const std::int64_t in_ch = h.conv_w.dim(1);
    fn("head.cls.conv.w", h.conv_w, TensorMeta{TensorKind::Weight, -1, in_ch});
    visit_bn("head.cls.bn", h.bn, -1, fn);
    fn("head.cls.fc.w", h.fc_w, TensorMeta{TensorKind::Weight, -1, h.fc_w.dim(1)});
    fn("head.cls.fc.b", h.fc_b, TensorMeta{TensorKind::Bias, -1, 0});
  }
  if (store.seg_head) {
    auto& h = *store.seg_head;
    for (std::size_t b = 0; b < h.branches.size(); ++b) {
      auto& br = h.branches[b];
      const std::string p = "head.seg.b" + std::to_string(b);
      fn(p + ".dw.w", br.dw_w, TensorMeta{TensorKind::Weight, -1, 9});
      fn(p + ".pw.w", br.pw_w, TensorMeta{TensorKind::Weight, -1, br.pw_w.dim(1)});
      visit_bn(p + ".bn", br.bn, -1, fn);
    }
    fn("head.seg.gp.w", h.gp_w, TensorMeta{TensorKind::Weight, -1, h.gp_w.dim(1)});
    fn("head.seg.gp.b", h.gp_b, TensorMeta{TensorKind::Bias, -1, 0});
    fn("head.seg.fuse.w", h.fuse_w, TensorMeta{TensorKind::Weight, -1, h.fuse_w.dim(1)});
    visit_bn("head.seg.fuse_bn", h.fuse_bn, -1, fn);
    fn("head.seg.cls.w", h.cls_w, TensorMeta{TensorKind::Weight, -1, h.cls_w.dim(1)});
    fn("head.seg.cls.b", h.cls_b, TensorMeta{TensorKind::Bias, -1, 0});
  }
}

template <typename T>
struct StoreIndex {
  std::unordered_map<std::string, Tensor<T>*> tensors;
  std::unordered_map<std::string, TensorMeta> metas;

  explicit StoreIndex(WeightStore<T>& store) {
    for_each_named_tensor(store, [&](const std::string& name, Tensor<T>& t, TensorMeta m) {
      tensors.emplace(name, &t);
      metas.emplace(name, m);
    });
  }

  Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw StructuralError("store tensor '" + name + "' missing");
    return *it->second;
  }
};

// ---------------------------------------------------------------------------
// Store construction.

template <typename T>
WeightStore<T> make_store_skeleton(const SearchSpaceConfig& space) {
  validate_space(space);
  WeightStore<T> s;
  s.space = space;
  s.stem.conv_w = Tensor<T>::zeros(
      {space.stem.out_channels, space.input_channels, space.stem.kernel, space.stem.kernel});
  s.stem.bn = BnParams<T>(space.stem.out_channels);
  if (space.fixed_block.present) {
    const auto& fb = space.fixed_block;
    s.fixed = BlockSlotParams<T>(space.stem.out_channels, fb.out_channels, fb.kernel,
                                 hidden_channels(space.stem.out_channels, fb.expansion));
  }
  const auto infos = layer_infos(space);
  s.layers.resize(infos.size());
  for (std::size_t l = 0; l < infos.size(); ++l)
    for (int k : space.kernel_choices)
      s.layers[l].emplace_back(infos[l].in_channels, infos[l].out_channels, k,
                               hidden_channels(infos[l].in_channels, space.max_expansion()));
  return s;
}

template <typename T>
void init_store_params(WeightStore<T>& store, Rng& rng) {
  for_each_named_tensor(store, [&](const std::string&, Tensor<T>& t, TensorMeta m) {
    switch (m.kind) {
      case TensorKind::Weight: {
        const double std = std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(1, m.fan_in)));
        for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, std));
        break;
      }
      case TensorKind::Bias:
      case TensorKind::Beta:
      case TensorKind::Mean:
        t.zero();
        break;
      case TensorKind::Gamma:
      case TensorKind::Var:
        std::fill(t.data.begin(), t.data.end(), T(1));
        break;
    }
  });
}

// He-style deterministic initialization of the full store.
template <typename T>
WeightStore<T> init_weight_store(const SearchSpaceConfig& space, std::uint64_t seed) {
  WeightStore<T> s = make_store_skeleton<T>(space);
  s.seed = seed;
  Rng rng(derive_seed(seed, fnv1a("store-init")));
  init_store_params(s, rng);
  return s;
}

// Zero-filled store of identical structure; used for gradient and momentum
// accumulators.
template <typename T>
WeightStore<T> zeros_like(const WeightStore<T>& store) {
  WeightStore<T> z = make_store_skeleton<T>(store.space);
  z.head = store.head;
  auto zero_bn = [](BnParams<T>& bn) {
    bn.gamma.zero();
    bn.beta.zero();
    bn.mean.zero();
    bn.var.zero();
  };
  // skeleton already zero except BN gamma/var defaults
  for_each_named_tensor(z, [](const std::string&, Tensor<T>& t, TensorMeta) { t.zero(); });
  if (store.cls_head) {
    z.cls_head = ClsHeadParams<T>{};
    z.cls_head->conv_w = Tensor<T>::zeros(store.cls_head->conv_w.shape);
    z.cls_head->bn = BnParams<T>(static_cast<int>(store.cls_head->bn.gamma.size()));
    zero_bn(z.cls_head->bn);
    z.cls_head->fc_w = Tensor<T>::zeros(store.cls_head->fc_w.shape);
    z.cls_head->fc_b = Tensor<T>::zeros(store.cls_head->fc_b.shape);
  }
  if (store.seg_head) {
    z.seg_head = SegHeadParams<T>{};
    for (const auto& br : store.seg_head->branches) {
      SegBranchParams<T> b;
      b.dw_w = Tensor<T>::zeros(br.dw_w.shape);
      b.pw_w = Tensor<T>::zeros(br.pw_w.shape);
      b.bn = BnParams<T>(static_cast<int>(br.bn.gamma.size()));
      zero_bn(b.bn);
      z.seg_head->branches.push_back(std::move(b));
    }
    z.seg_head->gp_w = Tensor<T>::zeros(store.seg_head->gp_w.shape);
    z.seg_head->gp_b = Tensor<T>::zeros(store.seg_head->gp_b.shape);
    z.seg_head->fuse_w = Tensor<T>::zeros(store.seg_head->fuse_w.shape);
    z.seg_head->fuse_bn = BnParams<T>(static_cast<int>(store.seg_head->fuse_bn.gamma.size()));
    zero_bn(z.seg_head->fuse_bn);
    z.seg_head->cls_w = Tensor<T>::zeros(store.seg_head->cls_w.shape);
    z.seg_head->cls_b = Tensor<T>::zeros(store.seg_head->cls_b.shape);
  }
  return z;
}

// ---------------------------------------------------------------------------
// Head attachment. The backbone is untouched; the head is freshly
// initialized from the given seed.

template <typename T>
void attach_head(WeightStore<T>& store, const HeadSpec& head, std::uint64_t init_seed) {
  if (store.head) throw UsageError("attach_head: a head is already attached");
  if (head.num_classes < 2) throw ConfigError("attach_head: need at least 2 classes");
  Rng rng(derive_seed(init_seed, fnv1a("head-init")));
  const auto infos = layer_infos(store.space);
  const int backbone_out = infos.back().out_channels;
  store.head = head;
  if (head.task == TaskKind::Classification) {
    ClsHeadParams<T> h;
    h.conv_w = Tensor<T>::zeros({store.space.head_channels, backbone_out, 1, 1});
    h.bn = BnParams<T>(store.space.head_channels);
    h.fc_w = Tensor<T>::zeros({head.num_classes, store.space.head_channels});
    h.fc_b = Tensor<T>::zeros({head.num_classes});
    store.cls_head = std::move(h);
  } else {
    SegHeadParams<T> h;
    const int cb = head.seg.fuse_channels;
    for (std::size_t b = 0; b < head.seg.dilation_rates.size(); ++b) {
      SegBranchParams<T> br;
      br.dw_w = Tensor<T>::zeros({backbone_out, 1, 3, 3});
      br.pw_w = Tensor<T>::zeros({cb, backbone_out, 1, 1});
      br.bn = BnParams<T>(cb);
      h.branches.push_back(std::move(br));
    }
    h.gp_w = Tensor<T>::zeros({cb, backbone_out});
    h.gp_b = Tensor<T>::zeros({cb});
    h.fuse_w = Tensor<T>::zeros(
        {cb, static_cast<int>(head.seg.dilation_rates.size() + 1) * cb, 1, 1});
    h.fuse_bn = BnParams<T>(cb);
    h.cls_w = Tensor<T>::zeros({head.num_classes, cb, 1, 1});
    h.cls_b = Tensor<T>::zeros({head.num_classes});
    store.seg_head = std::move(h);
  }
  // initialize only the head tensors
  for_each_named_tensor(store, [&](const std::string& name, Tensor<T>& t, TensorMeta m) {
    if (name.rfind("head.", 0) != 0) return;
    switch (m.kind) {
      case TensorKind::Weight: {
        const double std = std::sqrt(2.0 / static_cast<double>(std::max<std::int64_t>(1, m.fan_in)));
        for (auto& v : t.data) v = static_cast<T>(rng.normal(0.0, std));
        break;
      }
      case TensorKind::Bias:
      case TensorKind::Beta:
      case TensorKind::Mean:
        t.zero();
        break;
      case TensorKind::Gamma:
      case TensorKind::Var:
        std::fill(t.data.begin(), t.data.end(), T(1));
        break;
    }
  });
}

template <typename T>
void detach_head(WeightStore<T>& store) {
  if (!store.head) throw UsageError("detach_head: no head attached");
  store.head.reset();
  store.cls_head.reset();
  store.seg_head.reset();
}

// ---------------------------------------------------------------------------
// Slice copy/scatter between store tensors (full width) and view tensors
// (active width along `axis`).

template <typename T>
void copy_slice(Tensor<T>& view, const Tensor<T>& full, int axis, std::int64_t extent) {
  if (axis < 0) {
    if (!view.same_shape(full)) throw StructuralError("copy_slice: full-copy shape mismatch");
    view.data = full.data;
    return;
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full.shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < full.shape.size(); ++i)
    inner *= full.shape[i];
  const std::int64_t full_axis = full.shape[static_cast<std::size_t>(axis)];
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(full.ptr() + (o * full_axis) * inner, extent * inner,
                view.ptr() + (o * extent) * inner);
}

template <typename T>
void scatter_add_slice(Tensor<T>& full, const Tensor<T>& view, int axis, std::int64_t extent) {
  if (axis < 0) {
    if (!view.same_shape(full)) throw StructuralError("scatter_add_slice: shape mismatch");
    for (std::int64_t i = 0; i < full.size(); ++i) full.data[i] += view.data[i];
    return;
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full.shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < full.shape.size(); ++i)
    inner *= full.shape[i];
  const std::int64_t full_axis = full.shape[static_cast<std::size_t>(axis)];
  for (std::int64_t o = 0; o < outer; ++o) {
    const T* src = view.ptr() + (o * extent) * inner;
    T* dst = full.ptr() + (o * full_axis) * inner;
    for (std::int64_t i = 0; i < extent * inner; ++i) dst[i] += src[i];
  }
}

template <typename T>
void write_slice(Tensor<T>& full, const Tensor<T>& view, int axis, std::int64_t extent) {
  if (axis < 0) {
    if (!view.same_shape(full)) throw StructuralError("write_slice: shape mismatch");
    full.data = view.data;
    return;
  }
  std::int64_t outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= full.shape[static_cast<std::size_t>(i)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < full.shape.size(); ++i)
    inner *= full.shape[i];
  const std::int64_t full_axis = full.shape[static_cast<std::size_t>(axis)];
  for (std::int64_t o = 0; o < outer; ++o)
    std::copy_n(view.ptr() + (o * extent) * inner, extent * inner,
                full.ptr() + (o * full_axis) * inner);
}

// ---------------------------------------------------------------------------
// Subnet views.

template <typename T>
struct Binding {
  std::string name;          // store tensor name
  Tensor<T>* view_value = nullptr;
  Tensor<T>* view_grad = nullptr;  // null for BN stats
  int axis = -1;
  std::int64_t extent = 0;
  bool is_stat = false;
};

// Which store regions a step touched; drives the masked SGD update so that
// weights outside every sampled path stay exactly unchanged.
struct TouchedRegions {
  bool stem = false;
  bool fixed = false;
  bool head = false;
  std::map<std::pair<int, int>, std::int64_t> slots;  // (layer, kernel idx) -> max hidden

  void merge(const TouchedRegions& o) {
    stem |= o.stem;
    fixed |= o.fixed;
    head |= o.head;
    for (const auto& [key, h] : o.slots) {
      auto& cur = slots[key];
      cur = std::max(cur, h);
    }
  }
};

// Executable single-path subnetwork. Owns sliced copies of the store's
// weights; `load_from` refreshes them and `scatter_gradients` routes the
// gradients back into exactly the originating slices.
template <typename T>
class SubnetView {
 public:
  Genotype genotype;
  // heap-allocated so that bindings stay valid when the view is moved
  std::unique_ptr<Model<T>> model_ptr;
  std::vector<Binding<T>> bindings;
  TouchedRegions touched;

  Model<T>& model() { return *model_ptr; }
  const Model<T>& model() const { return *model_ptr; }

  void load_from(WeightStore<T>& store) {
    StoreIndex<T> idx(store);
    for (auto& b : bindings) copy_slice(*b.view_value, idx.at(b.name), b.axis, b.extent);
  }

  // Accumulate parameter gradients into a zero-initialized gradient store.
  void scatter_gradients(WeightStore<T>& grad_store) {
    StoreIndex<T> idx(grad_store);
    for (auto& b : bindings)
      if (b.view_grad) scatter_add_slice(idx.at(b.name), *b.view_grad, b.axis, b.extent);
  }

  // Push the view's BN running statistics back into the shared store
  // (training-time shared-statistics policy).
  void writeback_stats(WeightStore<T>& store) {
    StoreIndex<T> idx(store);
    for (auto& b : bindings)
      if (b.is_stat) write_slice(idx.at(b.name), *b.view_value, b.axis, b.extent);
  }

  void zero_grads() {
    for (auto& b : bindings)
      if (b.view_grad) b.view_grad->zero();
  }

  void collect_bns(std::vector<BatchNorm2d<T>*>& out) {
    auto add_block = [&](MBInvRes<T>& blk) {
      out.push_back(&blk.bn1);
      out.push_back(&blk.bn2);
      out.push_back(&blk.bn3);
    };
    Model<T>& m = model();
    out.push_back(&m.backbone.stem_bn);
    if (m.backbone.fixed_block) add_block(*m.backbone.fixed_block);
    for (auto& b : m.backbone.blocks) add_block(b);
    if (m.cls_head) out.push_back(&m.cls_head->bn);
    if (m.seg_head) {
      for (auto& br : m.seg_head->branches) out.push_back(&br->bn);
      out.push_back(&m.seg_head->fuse_bn);
    }
  }
};

namespace detail {

template <typename T>
void bind_bn(std::vector<Binding<T>>& out, const std::string& prefix, BatchNorm2d<T>& bn,
             int axis, std::int64_t extent) {
  out.push_back({prefix + ".gamma", &bn.gamma, &bn.ggamma, axis, extent, false});
  out.push_back({prefix + ".beta", &bn.beta, &bn.gbeta, axis, extent, false});
  out.push_back({prefix + ".mean", &bn.running_mean, nullptr, axis, extent, true});
  out.push_back({prefix + ".var", &bn.running_var, nullptr, axis, extent, true});
}

template <typename T>
void bind_block(std::vector<Binding<T>>& out, const std::string& prefix, MBInvRes<T>& blk,
                std::int64_t hidden) {
  out.push_back({prefix + ".expand.w", &blk.expand.w, &blk.expand.gw, 0, hidden, false});
  bind_bn(out, prefix + ".bn1", blk.bn1, 0, hidden);
  out.push_back({prefix + ".dw.w", &blk.dw.w, &blk.dw.gw, 0, hidden, false});
  bind_bn(out, prefix + ".bn2", blk.bn2, 0, hidden);
  out.push_back({prefix + ".se.fc1.w", &blk.se.fc1.w, &blk.se.fc1.gw, 1, hidden, false});
  out.push_back({prefix + ".se.fc1.b", &blk.se.fc1.b, &blk.se.fc1.gb, -1, 0, false});
  out.push_back({prefix + ".se.fc2.w", &blk.se.fc2.w, &blk.se.fc2.gw, 0, hidden, false});
  out.push_back({prefix + ".se.fc2.b", &blk.se.fc2.b, &blk.se.fc2.gb, 0, hidden, false});
  out.push_back({prefix + ".proj.w", &blk.project.w, &blk.project.gw, 1, hidden, false});
  bind_bn(out, prefix + ".bn3", blk.bn3, -1, 0);
}

}  // namespace detail

// Materialize an executable subnet for `genotype`: select the (layer, kernel)
// slot per gene and take prefix channel slices at width round(e * C_in).
template <typename T>
SubnetView<T> materialize_subnet(WeightStore<T>& store, const Genotype& genotype,
                                 const BuildOptions& opts = {}) {
  validate_genotype(store.space, genotype);
  BuildOptions eff = opts;
  if (eff.output_stride_cap == 0 && store.head && store.head->task == TaskKind::Segmentation)
    eff.output_stride_cap = store.head->seg.output_stride;
  SubnetView<T> v;
  v.genotype = genotype;
  v.model_ptr = std::make_unique<Model<T>>(build_model<T>(store.space, genotype, store.head, eff));
  auto& bb = v.model_ptr->backbone;
  v.bindings.push_back(
      {"stem.conv.w", &bb.stem_conv.w, &bb.stem_conv.gw, -1, 0, false});
  detail::bind_bn(v.bindings, "stem.bn", bb.stem_bn, -1, 0);
  v.touched.stem = true;
  if (bb.fixed_block) {
    detail::bind_block(v.bindings, "fixed", *bb.fixed_block,
                       hidden_channels(store.space.stem.out_channels,
                                       store.space.fixed_block.expansion));
    v.touched.fixed = true;
  }
  const auto infos = layer_infos(store.space);
  for (std::size_t l = 0; l < infos.size(); ++l) {
    const auto& gene = genotype.genes[l];
    const int ki = store.kernel_index(gene.kernel);
    const std::int64_t hidden = hidden_channels(infos[l].in_channels, gene.expansion);
    detail::bind_block(v.bindings,
                       "l" + std::to_string(l) + ".k" + std::to_string(gene.kernel),
                       bb.blocks[l], hidden);
    auto& cur = v.touched.slots[{static_cast<int>(l), ki}];
    cur = std::max(cur, hidden);
  }
  if (v.model().cls_head) {
    auto& h = *v.model().cls_head;
    v.bindings.push_back({"head.cls.conv.w", &h.conv.w, &h.conv.gw, -1, 0, false});
    detail::bind_bn(v.bindings, "head.cls.bn", h.bn, -1, 0);
    v.bindings.push_back({"head.cls.fc.w", &h.fc.w, &h.fc.gw, -1, 0, false});
    v.bindings.push_back({"head.cls.fc.b", &h.fc.b, &h.fc.gb, -1, 0, false});
    v.touched.head = true;
  }
  if (v.model().seg_head) {
    auto& h = *v.model().seg_head;
    for (std::size_t b = 0; b < h.branches.size(); ++b) {
      const std::string p = "head.seg.b" + std::to_string(b);
      v.bindings.push_back({p + ".dw.w", &h.branches[b]->dw.w, &h.branches[b]->dw.gw, -1, 0, false});
      v.bindings.push_back({p + ".pw.w", &h.branches[b]->pw.w, &h.branches[b]->pw.gw, -1, 0, false});
      detail::bind_bn(v.bindings, p + ".bn", h.branches[b]->bn, -1, 0);
    }
    v.bindings.push_back({"head.seg.gp.w", &h.gp_fc.w, &h.gp_fc.gw, -1, 0, false});
    v.bindings.push_back({"head.seg.gp.b", &h.gp_fc.b, &h.gp_fc.gb, -1, 0, false});
    v.bindings.push_back({"head.seg.fuse.w", &h.fuse.w, &h.fuse.gw, -1, 0, false});
    detail::bind_bn(v.bindings, "head.seg.fuse_bn", h.fuse_bn, -1, 0);
    v.bindings.push_back({"head.seg.cls.w", &h.cls.w, &h.cls.gw, -1, 0, false});
    v.bindings.push_back({"head.seg.cls.b", &h.cls_bias, &h.gcls_bias, -1, 0, false});
    v.touched.head = true;
  }
  v.load_from(store);
  return v;
}

// Reset the view's BN statistics and re-estimate them from the given batches
// (stat-collect mode). The shared store is untouched.
template <typename T>
void bn_recalibrate(SubnetView<T>& view, const std::vector<Tensor<T>>& batches) {
  if (batches.empty()) throw UsageError("bn_recalibrate: empty batch stream");
  std::vector<BatchNorm2d<T>*> bns;
  view.collect_bns(bns);
  for (auto* bn : bns) bn->reset_stats();
  for (const auto& b : batches) view.model().forward(b, Mode::StatCollect);
}

// ---------------------------------------------------------------------------
// Masked SGD update on the store. Only regions named in `touched` are
// updated; everything else (weights, momentum) stays exactly unchanged.

template <typename T>
void masked_sgd_update(WeightStore<T>& store, WeightStore<T>& grads, WeightStore<T>& momentum,
                       const TouchedRegions& touched, double lr, const SgdConfig& cfg) {
  StoreIndex<T> pidx(store), gidx(grads), midx(momentum);
  auto update_region = [&](const std::string& name, int axis, std::int64_t extent) {
    const TensorMeta meta = pidx.metas.at(name);
    if (meta.is_stat()) return;
    Tensor<T>& p = pidx.at(name);
    Tensor<T>& g = gidx.at(name);
    Tensor<T>& buf = midx.at(name);
    const T wd = meta.decay() ? static_cast<T>(cfg.weight_decay) : T(0);
    const T mom = static_cast<T>(cfg.momentum);
    auto apply = [&](std::int64_t begin, std::int64_t len) {
      for (std::int64_t i = begin; i < begin + len; ++i) {
        buf.data[i] = mom * buf.data[i] + g.data[i] + wd * p.data[i];
        p.data[i] -= static_cast<T>(lr) * buf.data[i];
      }
    };
    if (axis < 0 || meta.slice_axis < 0) {
      apply(0, p.size());
      return;
    }
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < meta.slice_axis; ++i) outer *= p.shape[static_cast<std::size_t>(i)];
    for (std::size_t i = static_cast<std::size_t>(meta.slice_axis) + 1; i < p.shape.size(); ++i)
      inner *= p.shape[i];
    const std::int64_t full_axis = p.shape[static_cast<std::size_t>(meta.slice_axis)];
    for (std::int64_t o = 0; o < outer; ++o) apply(o * full_axis * inner, extent * inner);
  };
  auto update_prefixed = [&](const std::string& prefix, std::int64_t extent) {
    for (const auto& [name, meta] : pidx.metas)
      if (name.rfind(prefix, 0) == 0) update_region(name, extent >= 0 ? meta.slice_axis : -1, extent);
  };
  if (touched.stem) update_prefixed("stem.", -1);
  if (touched.fixed && store.fixed) update_prefixed("fixed.", -1);
  if (touched.head) update_prefixed("head.", -1);
  for (const auto& [key, hidden] : touched.slots) {
    const auto& [layer, ki] = key;
    const std::string prefix = "l" + std::to_string(layer) + ".k" +
                               std::to_string(store.space.kernel_choices[static_cast<std::size_t>(ki)]) + ".";
    update_prefixed(prefix, hidden);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint persistence (f32 production stores). Directory layout:
// manifest.json + weights.bin (raw little-endian f32, canonical tensor order).
void save_checkpoint(WeightStore<float>& store, const std::string& dir);
WeightStore<float> load_checkpoint(const std::string& dir,
                                   const SearchSpaceConfig* expected_space = nullptr);
std::string checkpoint_blob_hash(const std::string& dir);

}  // namespace onas
