#pragma once

#include <functional>
#include <string>
#include <vector>

#include "onas/metrics.hpp"
#include "onas/supernet.hpp"
#include "onas/synth_data.hpp"

namespace onas {

struct TrainConfig {
  int epochs = 1;
  int batch_size = 16;
  double lr0 = 0.05;
  SgdConfig sgd{};
  int ensemble_paths = 5;  // paths per step (pretrain) / topologies per step (finetune)
  bool augment = true;
  int recalib_batches = 4;  // batches used to re-estimate BN stats before eval
  std::uint64_t seed = 1;
};

struct EpochStats {
  int epoch = 0;
  double mean_loss = 0.0;
  double lr = 0.0;
};

std::string epochs_to_csv(const std::vector<EpochStats>& stats);

// ---------------------------------------------------------------------------
// Path sampling.

// Uniform kernel choice per layer, expansion pinned to the maximum
// (pretraining searches topology only).
Genotype sample_kernel_genotype(const SearchSpaceConfig& space, Rng& rng);

// `paths` pairwise-distinct kernel genotypes (rejection sampling).
std::vector<Genotype> sample_distinct_kernel_paths(const SearchSpaceConfig& space, int paths,
                                                   Rng& rng);

// Minimum/maximum/random-width variants of a kernel topology.
Genotype with_uniform_width(const SearchSpaceConfig& space, const Genotype& topology,
                            double expansion);
Genotype with_random_widths(const SearchSpaceConfig& space, const Genotype& topology, Rng& rng);

// ---------------------------------------------------------------------------
// One shared-weight gradient accumulation step. Runs every path on the same
// batch, sums parameter gradients into `grads` (zeroed by the caller), and
// merges the touched regions. Returns the summed loss; the caller divides by
// the path count before the update. Templated so the numerics can be checked
// in double precision.
template <typename T>
double ensemble_accumulate(WeightStore<T>& store, const std::vector<Genotype>& paths,
                           const Tensor<T>& images, const std::vector<int>& targets,
                           WeightStore<T>& grads, TouchedRegions& touched) {
  if (paths.empty()) throw UsageError("ensemble_accumulate: no paths");
  double loss_sum = 0.0;
  for (const auto& g : paths) {
    SubnetView<T> view = materialize_subnet(store, g);
    Tensor<T> logits = view.model().forward(images, Mode::Train);
    LossResult<T> lr = view.model().loss(logits, targets);
    loss_sum += lr.loss;
    view.model().backward(lr.grad);
    view.scatter_gradients(grads);
    view.writeback_stats(store);
    touched.merge(view.touched);
  }
  return loss_sum;
}

template <typename T>
void scale_store(WeightStore<T>& s, T factor) {
  for_each_named_tensor(s, [factor](const std::string&, Tensor<T>& t, TensorMeta) {
    for (auto& v : t.data) v *= factor;
  });
}

// ---------------------------------------------------------------------------
// Stage drivers (production precision).

// Ensemble single-path supernet pretraining. Attaches a classification head
// when none is present; refuses a segmentation head.
std::vector<EpochStats> pretrain(WeightStore<float>& store, const Dataset& train,
                                 const TrainConfig& cfg);

// Width-inclusive fine-tuning: per sampled topology, one pass each at
// minimum, maximum and random width. Requires a pretrained store unless
// `allow_scratch`; swaps the head when the task changes.
std::vector<EpochStats> finetune(WeightStore<float>& store, const HeadSpec& head,
                                 const Dataset& train, const TrainConfig& cfg,
                                 bool allow_scratch = false);

// BN re-estimation on `calib` followed by evaluation on `eval_ds`.
MetricReport evaluate_subnet(WeightStore<float>& store, const Genotype& genotype,
                             const Dataset& calib, const Dataset& eval_ds,
                             const TrainConfig& cfg);

MetricReport evaluate_model(Model<float>& model, const Dataset& eval_ds, int batch_size,
                            int num_classes);

// Standalone training of one architecture from scratch.
struct RetrainResult {
  std::vector<EpochStats> epochs;
  MetricReport val;
};
RetrainResult retrain_standalone(const SearchSpaceConfig& space, const Genotype& genotype,
                                 const HeadSpec& head, const Dataset& train,
                                 const Dataset& eval_ds, const TrainConfig& cfg);

// He-style init for a standalone (non-shared) model.
template <typename T>
void init_model_params(Model<T>& m, Rng& rng) {
  std::vector<ParamRef<T>> params;
  m.collect_params(params);
  for (auto& p : params) {
    if (!p.decay) continue;  // BN affine and biases keep their defaults
    const auto& sh = p.value->shape;
    std::int64_t fan_in = 1;
    if (sh.size() == 4) {
      // conv (Cout, Cin, k, k); depthwise has Cin slot 1 and fans in over k*k
      fan_in = sh[1] * sh[2] * sh[3];
    } else if (sh.size() == 2) {
      fan_in = sh[1];
    }
    const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : p.value->data) v = static_cast<T>(rng.normal(0.0, std));
  }
}

}  // namespace onas
