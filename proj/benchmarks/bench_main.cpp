#include <benchmark/benchmark.h>

#include "onas/train.hpp"

namespace {

onas::Tensor<float> random_images(std::int64_t n, std::int64_t c, std::int64_t hw,
                                  std::uint64_t seed) {
  onas::Rng rng(seed);
  onas::Tensor<float> x = onas::Tensor<float>::zeros({n, c, hw, hw});
  for (auto& v : x.data) v = static_cast<float>(rng.normal(0.0, 1.0));
  return x;
}

void BM_ConvForward(benchmark::State& state) {
  const int ch = static_cast<int>(state.range(0));
  onas::Conv2d<float> conv(ch, ch, 3);
  onas::Rng rng(7);
  for (auto& v : conv.w.data) v = static_cast<float>(rng.normal(0.0, 0.1));
  const onas::Tensor<float> x = random_images(8, ch, 16, 11);
  for (auto _ : state) {
    benchmark::DoNotOptimize(conv.forward(x, onas::Mode::Eval));
  }
}
BENCHMARK(BM_ConvForward)->Arg(16)->Arg(32)->Arg(64);

void BM_SubnetForward(benchmark::State& state) {
  const onas::SearchSpaceConfig space = onas::desk_space();
  auto store = onas::init_weight_store<float>(space, 3);
  onas::attach_head(store, onas::HeadSpec{onas::TaskKind::Classification, 4, {}}, 4);
  onas::Rng rng(5);
  onas::SubnetView<float> view =
      onas::materialize_subnet(store, onas::random_genotype(space, rng));
  const onas::Tensor<float> x = random_images(8, space.input_channels, space.input_resolution, 13);
  for (auto _ : state) {
    benchmark::DoNotOptimize(view.model().forward(x, onas::Mode::Eval));
  }
}
BENCHMARK(BM_SubnetForward);

void BM_EnsembleStep(benchmark::State& state) {
  const int paths = static_cast<int>(state.range(0));
  const onas::SearchSpaceConfig space = onas::desk_space();
  auto store = onas::init_weight_store<float>(space, 3);
  onas::attach_head(store, onas::HeadSpec{onas::TaskKind::Classification, 4, {}}, 4);
  auto grads = onas::zeros_like(store);
  auto momentum = onas::zeros_like(store);
  onas::Rng rng(9);
  const onas::Tensor<float> x = random_images(8, space.input_channels, space.input_resolution, 17);
  std::vector<int> labels;
  for (int i = 0; i < 8; ++i) labels.push_back(i % 4);
  for (auto _ : state) {
    const auto sampled = onas::sample_distinct_kernel_paths(space, paths, rng);
    onas::scale_store(grads, 0.0f);
    onas::TouchedRegions touched;
    onas::ensemble_accumulate(store, sampled, x, labels, grads, touched);
    onas::scale_store(grads, 1.0f / static_cast<float>(paths));
    onas::masked_sgd_update(store, grads, momentum, touched, 0.01, onas::SgdConfig{});
  }
}
BENCHMARK(BM_EnsembleStep)->Arg(1)->Arg(5);

}  // namespace

BENCHMARK_MAIN();
