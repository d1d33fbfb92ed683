// Tests for the shared weight store: deterministic initialization, prefix
// slicing, gradient scatter masking, the masked optimizer step, checkpoints,
// and BatchNorm recalibration.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "onas/supernet.hpp"
#include "subnet_oracle.hpp"
#include "test_support.hpp"

using namespace onas;
using namespace onas::testing;
namespace fs = std::filesystem;

namespace {

// Two kernels x two expansions over three layers: 64 genotypes, enumerable.
SearchSpaceConfig tiny_space() {
  SearchSpaceConfig s;
  s.input_resolution = 16;
  s.input_channels = 3;
  s.stem = {4, 3, 2};
  s.fixed_block = {true, 3, 1.0, 4, 1};
  s.stages = {{1, 6, 2, Act::ReLU}, {2, 8, 1, Act::Swish}};
  s.kernel_choices = {3, 5};
  s.expansion_choices = {2.0, 4.0};
  s.head_channels = 32;
  return s;
}

template <typename T>
Tensor<T> rand_image(Rng& rng, const SearchSpaceConfig& s, int n = 2) {
  Tensor<T> x({n, s.input_channels, s.input_resolution, s.input_resolution});
  for (auto& v : x.data) v = static_cast<T>(rng.normal(0.0, 1.0));
  return x;
}

bool bit_equal(const Tensor<float>& a, const Tensor<float>& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data.data(), b.data.data(),
                     static_cast<std::size_t>(a.size()) * sizeof(float)) == 0;
}

}  // namespace

TEST_CASE("store initialization is a deterministic function of the seed") {
  const auto s = tiny_space();
  auto a = init_weight_store<float>(s, 123);
  auto b = init_weight_store<float>(s, 123);
  auto c = init_weight_store<float>(s, 124);
  bool same = true, diff = false;
  for_each_named_tensor(a, [&](const std::string& name, Tensor<float>& t, TensorMeta) {
    StoreIndex<float> bi(b), ci(c);
    same &= bit_equal(t, bi.at(name));
    diff |= !bit_equal(t, ci.at(name));
  });
  CHECK(same);
  CHECK(diff);
  CHECK(a.stage_tag == stage::kInitialized);
  // One slot exists per (layer, kernel choice), allocated at maximal width.
  REQUIRE(a.layers.size() == 3);
  for (const auto& row : a.layers) CHECK(row.size() == 2);
  CHECK(a.layers[0][0].max_hidden == hidden_channels(4, 4.0));
}

TEST_CASE("slice helpers copy, scatter and write exactly the leading slice") {
  // [DERIVED] hand-checkable 2x3 example, axis 1 with extent 2.
  Tensor<float> full({2, 3});
  for (int i = 0; i < 6; ++i) full.data[static_cast<std::size_t>(i)] = static_cast<float>(i);
  Tensor<float> view({2, 2});
  copy_slice(view, full, 1, 2);
  CHECK(view.data == std::vector<float>{0, 1, 3, 4});
  Tensor<float> acc = Tensor<float>::zeros({2, 3});
  scatter_add_slice(acc, view, 1, 2);
  scatter_add_slice(acc, view, 1, 2);
  CHECK(acc.data == std::vector<float>{0, 2, 0, 6, 8, 0});
  Tensor<float> target = Tensor<float>::full({2, 3}, 9.f);
  write_slice(target, view, 1, 2);
  CHECK(target.data == std::vector<float>{0, 1, 9, 3, 4, 9});
  // axis -1 is a full copy and demands matching shapes
  Tensor<float> whole({2, 3});
  copy_slice(whole, full, -1, 0);
  CHECK(whole.data == full.data);
  CHECK_THROWS_AS(copy_slice(view, full, -1, 0), StructuralError);
}

TEST_CASE("subnet views equal independently sliced standalone networks") {
  // [PAPER] weight-sharing law: the subnet for genotype g computes exactly the
  // function of a standalone net whose weights are the leading channels of the
  // shared tensors. Checked over the whole 64-genotype space, f32, 1e-6.
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 5);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 6);
  Rng rng(9);
  double worst = 0.0;
  for (const auto& g : all_genotypes(s)) {
    auto view = materialize_subnet(store, g);
    Model<float> solo = standalone_from_store(store, g);
    const Tensor<float> x = rand_image<float>(rng, s);
    const Tensor<float> ya = view.model().forward(x, Mode::Eval);
    const Tensor<float> yb = solo.forward(x, Mode::Eval);
    worst = std::max(worst, max_abs_diff(ya, yb));
  }
  CHECK(worst < 1e-6);
  // Repeat with fresh inputs on a handful of genotypes to cover input variety.
  Rng grng(10);
  for (int i = 0; i < 10; ++i) {
    const Genotype g = random_genotype(s, grng);
    auto view = materialize_subnet(store, g);
    Model<float> solo = standalone_from_store(store, g);
    const Tensor<float> x = rand_image<float>(rng, s);
    CHECK(max_abs_diff(view.model().forward(x, Mode::Eval), solo.forward(x, Mode::Eval)) < 1e-6);
  }
}

TEST_CASE("nested widths share the narrow prefix of the wide slot") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 3);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 1);
  Genotype narrow = min_genotype(s), wide = min_genotype(s);
  for (auto& gene : wide.genes) gene.expansion = 4.0;
  auto vn = materialize_subnet(store, narrow);
  auto vw = materialize_subnet(store, wide);
  const auto infos = layer_infos(s);
  for (std::size_t l = 0; l < infos.size(); ++l) {
    const auto& wn = vn.model().backbone.blocks[l].expand.w;
    const auto& ww = vw.model().backbone.blocks[l].expand.w;
    const std::int64_t hn = wn.dim(0);
    for (std::int64_t o = 0; o < hn; ++o)
      for (std::int64_t i = 0; i < wn.dim(1); ++i)
        CHECK(wn.at4(o, i, 0, 0) == ww.at4(o, i, 0, 0));
  }
}

TEST_CASE("gradient scatter is exactly zero outside the sampled path") {
  // [PAPER] masked-gradient law: one backward pass writes gradients only into
  // the chosen (layer, kernel) slots and only into the active width prefix.
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 21);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 22);
  Genotype g = min_genotype(s);  // all K3, e=2.0 (narrow)
  auto view = materialize_subnet(store, g);
  Rng rng(1);
  const Tensor<float> x = rand_image<float>(rng, s);
  const Tensor<float> logits = view.model().forward(x, Mode::Train);
  const auto lr = view.model().loss(logits, {0, 1});
  view.model().backward(lr.grad);
  auto grads = zeros_like(store);
  view.scatter_gradients(grads);

  StoreIndex<float> gidx(grads);
  const auto infos = layer_infos(s);
  for (std::size_t l = 0; l < infos.size(); ++l) {
    // untouched kernel slot: every gradient element is exactly zero
    const std::string off = "l" + std::to_string(l) + ".k5.expand.w";
    for (float v : gidx.at(off).data) CHECK(v == 0.0f);
    // touched slot: zero beyond the active hidden width, nonzero inside
    const std::int64_t h = hidden_channels(infos[l].in_channels, 2.0);
    const Tensor<float>& gw = gidx.at("l" + std::to_string(l) + ".k3.expand.w");
    bool inside_nonzero = false;
    for (std::int64_t o = 0; o < gw.dim(0); ++o)
      for (std::int64_t i = 0; i < gw.dim(1); ++i) {
        if (o >= h)
          CHECK(gw.at4(o, i, 0, 0) == 0.0f);
        else
          inside_nonzero |= (gw.at4(o, i, 0, 0) != 0.0f);
      }
    CHECK(inside_nonzero);
  }
  // stem and head received gradients
  bool stem_nonzero = false;
  for (float v : gidx.at("stem.conv.w").data) stem_nonzero |= (v != 0.0f);
  CHECK(stem_nonzero);
  // touched-region bookkeeping matches the genotype
  CHECK(view.touched.stem);
  CHECK(view.touched.head);
  CHECK(view.touched.slots.size() == infos.size());
  for (const auto& [key, h] : view.touched.slots) {
    CHECK(key.second == 0);  // kernel index of K3
    CHECK(h == hidden_channels(infos[static_cast<std::size_t>(key.first)].in_channels, 2.0));
  }
}

TEST_CASE("masked update leaves untouched weights and momentum bit-identical") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 31);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 32);
  auto before = store;  // deep copy
  auto grads = zeros_like(store);
  auto momentum = zeros_like(store);

  Genotype g = min_genotype(s);
  auto view = materialize_subnet(store, g);
  Rng rng(2);
  const Tensor<float> x = rand_image<float>(rng, s);
  const auto lr = view.model().loss(view.model().forward(x, Mode::Train), {1, 2});
  view.model().backward(lr.grad);
  view.scatter_gradients(grads);
  masked_sgd_update(store, grads, momentum, view.touched, 0.1, SgdConfig{0.9, 4e-5});

  StoreIndex<float> pre(before), post(store), mom(momentum);
  const auto infos = layer_infos(s);
  for (std::size_t l = 0; l < infos.size(); ++l) {
    const std::string base = "l" + std::to_string(l);
    // the unsampled kernel slot is bit-identical, momentum still zero
    CHECK(bit_equal(pre.at(base + ".k5.expand.w"), post.at(base + ".k5.expand.w")));
    CHECK(bit_equal(pre.at(base + ".k5.dw.w"), post.at(base + ".k5.dw.w")));
    for (float v : mom.at(base + ".k5.expand.w").data) CHECK(v == 0.0f);
    // within the sampled slot, rows beyond the active width are bit-identical
    const std::int64_t h = hidden_channels(infos[l].in_channels, 2.0);
    const Tensor<float>& pw = pre.at(base + ".k3.expand.w");
    const Tensor<float>& nw = post.at(base + ".k3.expand.w");
    bool changed_inside = false;
    for (std::int64_t o = 0; o < pw.dim(0); ++o)
      for (std::int64_t i = 0; i < pw.dim(1); ++i) {
        if (o >= h)
          CHECK(pw.at4(o, i, 0, 0) == nw.at4(o, i, 0, 0));
        else
          changed_inside |= (pw.at4(o, i, 0, 0) != nw.at4(o, i, 0, 0));
      }
    CHECK(changed_inside);
    // BN running stats are never stepped by the optimizer
    CHECK(bit_equal(pre.at(base + ".k3.bn1.mean"), post.at(base + ".k3.bn1.mean")));
    CHECK(bit_equal(pre.at(base + ".k3.bn1.var"), post.at(base + ".k3.bn1.var")));
  }
  // stem and head did move
  CHECK(!bit_equal(pre.at("stem.conv.w"), post.at("stem.conv.w")));
  CHECK(!bit_equal(pre.at("head.cls.fc.w"), post.at("head.cls.fc.w")));
}

TEST_CASE("masked update matches a hand-stepped SGD oracle on a touched region") {
  // [DERIVED] two steps of momentum+decay recomputed by hand on the stem.
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 41);
  auto grads = zeros_like(store);
  auto momentum = zeros_like(store);
  StoreIndex<float> gi(grads), pi(store);
  Rng rng(3);
  for (auto& v : gi.at("stem.conv.w").data) v = static_cast<float>(rng.normal(0.0, 1.0));

  std::vector<float> p = pi.at("stem.conv.w").data;
  std::vector<float> buf(p.size(), 0.0f);
  const auto& gv = gi.at("stem.conv.w").data;
  const float mu = 0.9f, wd = 1e-4f, lr = 0.05f;
  TouchedRegions touched;
  touched.stem = true;
  for (int step = 0; step < 2; ++step) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      buf[i] = mu * buf[i] + gv[i] + wd * p[i];
      p[i] -= lr * buf[i];
    }
    masked_sgd_update(store, grads, momentum, touched, lr, SgdConfig{mu, wd});
  }
  for (std::size_t i = 0; i < p.size(); ++i)
    CHECK(pi.at("stem.conv.w").data[i] == doctest::Approx(p[i]).epsilon(1e-6));
  // gamma has no weight decay
  CHECK(pi.metas.at("stem.bn.gamma").decay() == false);
}

TEST_CASE("checkpoints round-trip bit-exactly and carry their metadata") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 77);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 78);
  store.stage_tag = stage::kPretrained;
  const fs::path dir = fs::temp_directory_path() / "onas_ckpt_test";
  fs::remove_all(dir);
  save_checkpoint(store, dir.string());

  auto back = load_checkpoint(dir.string(), &s);
  CHECK(back.stage_tag == stage::kPretrained);
  CHECK(back.seed == store.seed);
  CHECK(back.parent_hash == checkpoint_blob_hash(dir.string()));
  REQUIRE(back.head.has_value());
  CHECK(back.head->task == TaskKind::Classification);
  StoreIndex<float> bi(back);
  bool all_equal = true;
  std::size_t count = 0;
  for_each_named_tensor(store, [&](const std::string& name, Tensor<float>& t, TensorMeta) {
    all_equal &= bit_equal(t, bi.at(name));
    ++count;
  });
  CHECK(all_equal);
  CHECK(count > 0);

  // a segmentation head round-trips its spec too
  detach_head(store);
  attach_head(store, HeadSpec{TaskKind::Segmentation, 4, SegHeadSpec{{1, 2}, 16, 8}}, 79);
  const fs::path dir2 = fs::temp_directory_path() / "onas_ckpt_test_seg";
  fs::remove_all(dir2);
  save_checkpoint(store, dir2.string());
  auto seg = load_checkpoint(dir2.string());
  REQUIRE(seg.head.has_value());
  CHECK(seg.head->task == TaskKind::Segmentation);
  CHECK(seg.head->seg.dilation_rates == std::vector<int>{1, 2});
  CHECK(seg.head->seg.fuse_channels == 16);
  fs::remove_all(dir);
  fs::remove_all(dir2);
}

TEST_CASE("checkpoint loading detects version, corruption and truncation") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 88);
  const fs::path dir = fs::temp_directory_path() / "onas_ckpt_err";
  fs::remove_all(dir);
  save_checkpoint(store, dir.string());

  SUBCASE("future format version") {
    std::ifstream in(dir / "manifest.json");
    std::stringstream ss;
    ss << in.rdbuf();
    std::string m = ss.str();
    const auto pos = m.find("\"version\": 1");
    REQUIRE(pos != std::string::npos);
    m.replace(pos, 12, "\"version\": 2");
    std::ofstream(dir / "manifest.json", std::ios::trunc) << m;
    CHECK_THROWS_AS(load_checkpoint(dir.string()), CheckpointVersionError);
  }
  SUBCASE("flipped byte in the blob") {
    std::fstream f(dir / "weights.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(17);
    char c;
    f.seekg(17);
    f.get(c);
    f.seekp(17);
    f.put(static_cast<char>(c ^ 0x40));
    f.close();
    CHECK_THROWS_AS(load_checkpoint(dir.string()), CheckpointHashError);
  }
  SUBCASE("truncated blob") {
    const auto full = fs::file_size(dir / "weights.bin");
    fs::resize_file(dir / "weights.bin", full / 2);
    CHECK_THROWS_AS(load_checkpoint(dir.string()), CheckpointTruncatedError);
  }
  SUBCASE("space mismatch against the caller's expectation") {
    auto other = tiny_space();
    other.head_channels += 8;
    CHECK_THROWS_AS(load_checkpoint(dir.string(), &other), CheckpointHashError);
  }
  SUBCASE("missing directory") {
    CHECK_THROWS_AS(load_checkpoint((dir / "nope").string()), CheckpointError);
  }
  fs::remove_all(dir);
}

TEST_CASE("head attach/detach guards") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 9);
  CHECK_THROWS_AS(detach_head(store), UsageError);
  CHECK_THROWS_AS(attach_head(store, HeadSpec{TaskKind::Classification, 1, {}}, 0), ConfigError);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 0);
  CHECK_THROWS_AS(attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 0), UsageError);
  // attaching a head never perturbs backbone weights
  auto fresh = init_weight_store<float>(s, 9);
  StoreIndex<float> si(store);
  for_each_named_tensor(fresh, [&](const std::string& name, Tensor<float>& t, TensorMeta) {
    CHECK(bit_equal(t, si.at(name)));
  });
  detach_head(store);
  CHECK(!store.head);
  CHECK(!store.cls_head);
}

TEST_CASE("bn_recalibrate re-estimates view statistics without touching the store") {
  const auto s = tiny_space();
  auto store = init_weight_store<float>(s, 55);
  attach_head(store, HeadSpec{TaskKind::Classification, 4, {}}, 56);
  auto before = store;
  auto view = materialize_subnet(store, max_genotype(s));
  CHECK_THROWS_AS(bn_recalibrate(view, std::vector<Tensor<float>>{}), UsageError);

  Rng rng(4);
  std::vector<Tensor<float>> batches;
  for (int i = 0; i < 3; ++i) batches.push_back(rand_image<float>(rng, s, 4));
  bn_recalibrate(view, batches);
  // stem BN mean moved away from its initialized zeros
  double mag = 0;
  for (float v : view.model().backbone.stem_bn.running_mean.data) mag += std::abs(v);
  CHECK(mag > 0.0);
  // [DERIVED] stat-collect over identical copies of one batch equals the
  // single-batch statistics exactly
  auto view2 = materialize_subnet(store, max_genotype(s));
  bn_recalibrate(view2, {batches[0], batches[0]});
  auto view3 = materialize_subnet(store, max_genotype(s));
  bn_recalibrate(view3, {batches[0]});
  CHECK(max_abs_diff(view2.model().backbone.stem_bn.running_mean,
                     view3.model().backbone.stem_bn.running_mean) < 1e-6);
  // the shared store is untouched
  StoreIndex<float> pre(before), post(store);
  for_each_named_tensor(before, [&](const std::string& name, Tensor<float>&, TensorMeta) {
    CHECK(bit_equal(pre.at(name), post.at(name)));
  });
}

TEST_CASE("segmentation views cap the output stride and bind the seg head") {
  auto s = tiny_space();
  auto store = init_weight_store<float>(s, 61);
  attach_head(store, HeadSpec{TaskKind::Segmentation, 4, SegHeadSpec{{1, 2}, 16, 8}}, 62);
  auto view = materialize_subnet(store, max_genotype(s));
  REQUIRE(view.model().seg_head);
  Rng rng(5);
  const Tensor<float> x = rand_image<float>(rng, s);
  const Tensor<float> y = view.model().forward(x, Mode::Eval);
  // per-pixel logits restored to input resolution
  CHECK(y.dim(1) == 4);
  CHECK(y.dim(2) == s.input_resolution);
  CHECK(y.dim(3) == s.input_resolution);
  CHECK(view.touched.head);
}
