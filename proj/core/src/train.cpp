#include "onas/train.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace onas {

namespace {

std::vector<std::vector<int>> epoch_batches(int n, int batch_size, Rng& rng) {
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (int i = n - 1; i > 0; --i) std::swap(order[i], order[rng.uniform_int(0, i)]);
  std::vector<std::vector<int>> batches;
  for (int off = 0; off + batch_size <= n; off += batch_size)
    batches.emplace_back(order.begin() + off, order.begin() + off + batch_size);
  if (batches.empty()) throw ConfigError("training set smaller than one batch");
  return batches;
}

void load_batch(const Dataset& ds, const std::vector<int>& idx, bool augment_on, Rng& rng,
                Tensor<float>& images, std::vector<int>& targets) {
  if (!augment_on) {
    make_batch(ds, idx, images, targets);
    return;
  }
  const auto& first = ds.items.front().image;
  const std::int64_t c = first.dim(1), h = first.dim(2), w = first.dim(3);
  images = Tensor<float>::zeros({static_cast<std::int64_t>(idx.size()), c, h, w});
  targets.clear();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    Sample s = augment(ds.items[static_cast<std::size_t>(idx[i])], ds.spec.segmentation, rng);
    std::copy(s.image.data.begin(), s.image.data.end(),
              images.data.begin() + static_cast<std::int64_t>(i) * c * h * w);
    targets.insert(targets.end(), s.target.begin(), s.target.end());
  }
}

// Shared epoch loop: `sampler` yields the paths for one step.
std::vector<EpochStats> run_shared_training(
    WeightStore<float>& store, const Dataset& train, const TrainConfig& cfg,
    std::uint64_t stream_tag,
    const std::function<std::vector<Genotype>(Rng&)>& sampler) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  WeightStore<float> grads = zeros_like(store);
  WeightStore<float> momentum = zeros_like(store);
  Rng data_rng(derive_seed(cfg.seed, stream_tag, fnv1a("data")));
  Rng path_rng(derive_seed(cfg.seed, stream_tag, fnv1a("paths")));

  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>(train.size() / cfg.batch_size);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  std::int64_t step = 0;

  std::vector<EpochStats> out;
  Tensor<float> images;
  std::vector<int> targets;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto batches = epoch_batches(train.size(), cfg.batch_size, data_rng);
    double loss_acc = 0.0;
    double lr = cfg.lr0;
    std::int64_t passes = 0;
    for (const auto& b : batches) {
      load_batch(train, b, cfg.augment, data_rng, images, targets);
      const std::vector<Genotype> paths = sampler(path_rng);
      scale_store(grads, 0.0f);
      TouchedRegions touched;
      const double loss_sum =
          ensemble_accumulate(store, paths, images, targets, grads, touched);
      const auto np = static_cast<float>(paths.size());
      scale_store(grads, 1.0f / np);
      lr = cosine_lr(step, total_steps, cfg.lr0);
      masked_sgd_update(store, grads, momentum, touched, lr, cfg.sgd);
      loss_acc += loss_sum / np;
      passes += 1;
      ++step;
    }
    out.push_back({e, loss_acc / static_cast<double>(passes), lr});
  }
  return out;
}

}  // namespace

std::string epochs_to_csv(const std::vector<EpochStats>& stats) {
  std::ostringstream ss;
  ss << "epoch,mean_loss,lr\n";
  for (const auto& e : stats) ss << e.epoch << "," << e.mean_loss << "," << e.lr << "\n";
  return ss.str();
}

Genotype sample_kernel_genotype(const SearchSpaceConfig& space, Rng& rng) {
  Genotype g;
  const auto infos = layer_infos(space);
  for (std::size_t i = 0; i < infos.size(); ++i) {
    const int k = space.kernel_choices[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(space.kernel_choices.size()) - 1))];
    g.genes.push_back({k, space.max_expansion()});
  }
  return g;
}

std::vector<Genotype> sample_distinct_kernel_paths(const SearchSpaceConfig& space, int paths,
                                                   Rng& rng) {
  if (paths < 1) throw ConfigError("need at least one path per step");
  if (space_size(space) != 0 &&
      static_cast<std::uint64_t>(paths) >
          std::uint64_t(1) << std::min<std::size_t>(62, layer_infos(space).size()))
    throw ConfigError("more distinct paths requested than the space holds");
  std::vector<Genotype> out;
  std::vector<std::string> seen;
  int tries = 0;
  while (static_cast<int>(out.size()) < paths) {
    Genotype g = sample_kernel_genotype(space, rng);
    const std::string key = encode_genotype(g);
    if (std::find(seen.begin(), seen.end(), key) == seen.end()) {
      seen.push_back(key);
      out.push_back(std::move(g));
    }
    if (++tries > 1000 * paths)
      throw NumericError("distinct path sampling failed to converge");
  }
  return out;
}

Genotype with_uniform_width(const SearchSpaceConfig& space, const Genotype& topology,
                            double expansion) {
  Genotype g = topology;
  for (auto& gene : g.genes) gene.expansion = expansion;
  validate_genotype(space, g);
  return g;
}

Genotype with_random_widths(const SearchSpaceConfig& space, const Genotype& topology,
                            Rng& rng) {
  Genotype g = topology;
  for (auto& gene : g.genes)
    gene.expansion = space.expansion_choices[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(space.expansion_choices.size()) - 1))];
  return g;
}

std::vector<EpochStats> pretrain(WeightStore<float>& store, const Dataset& train,
                                 const TrainConfig& cfg) {
  if (store.head && store.head->task != TaskKind::Classification)
    throw StageGuardError("pretraining runs on a classification head");
  if (!store.head)
    attach_head(store, HeadSpec{TaskKind::Classification, train.spec.num_classes, {}},
                derive_seed(cfg.seed, fnv1a("pretrain-head")));
  auto stats = run_shared_training(
      store, train, cfg, fnv1a("pretrain"), [&](Rng& rng) {
        return sample_distinct_kernel_paths(store.space, cfg.ensemble_paths, rng);
      });
  store.stage_tag = stage::kPretrained;
  return stats;
}

std::vector<EpochStats> finetune(WeightStore<float>& store, const HeadSpec& head,
                                 const Dataset& train, const TrainConfig& cfg,
                                 bool allow_scratch) {
  if (store.stage_tag != stage::kPretrained && !allow_scratch)
    throw StageGuardError("fine-tuning expects a pretrained store (stage '" +
                          store.stage_tag + "'); pass allow_scratch to override");
  const bool head_matches = store.head && store.head->task == head.task &&
                            store.head->num_classes == head.num_classes;
  if (!head_matches) {
    if (store.head) detach_head(store);
    attach_head(store, head, derive_seed(cfg.seed, fnv1a("finetune-head")));
  }
  const double w_min = store.space.min_expansion();
  const double w_max = store.space.max_expansion();
  auto stats = run_shared_training(
      store, train, cfg, fnv1a("finetune"), [&](Rng& rng) {
        std::vector<Genotype> paths;
        for (int b = 0; b < cfg.ensemble_paths; ++b) {
          const Genotype topo = sample_kernel_genotype(store.space, rng);
          paths.push_back(with_uniform_width(store.space, topo, w_min));
          paths.push_back(with_uniform_width(store.space, topo, w_max));
          paths.push_back(with_random_widths(store.space, topo, rng));
        }
        return paths;
      });
  store.stage_tag = stage::finetuned(head.task);
  return stats;
}

MetricReport evaluate_model(Model<float>& model, const Dataset& eval_ds, int batch_size,
                            int num_classes) {
  std::vector<int> preds, labels;
  Tensor<float> images;
  std::vector<int> targets;
  for (int off = 0; off < eval_ds.size(); off += batch_size) {
    std::vector<int> idx;
    for (int i = off; i < std::min(eval_ds.size(), off + batch_size); ++i) idx.push_back(i);
    make_batch(eval_ds, idx, images, targets);
    Tensor<float> logits = model.forward(images, Mode::Eval);
    const auto p = argmax_predictions(logits);
    preds.insert(preds.end(), p.begin(), p.end());
    labels.insert(labels.end(), targets.begin(), targets.end());
  }
  return compute_metrics(preds, labels, num_classes);
}

MetricReport evaluate_subnet(WeightStore<float>& store, const Genotype& genotype,
                             const Dataset& calib, const Dataset& eval_ds,
                             const TrainConfig& cfg) {
  if (!store.head) throw UsageError("evaluate_subnet: store has no head");
  SubnetView<float> view = materialize_subnet(store, genotype);
  Rng rng(derive_seed(cfg.seed, fnv1a("bn-recalib")));
  std::vector<Tensor<float>> batches;
  Tensor<float> images;
  std::vector<int> targets;
  for (int i = 0; i < cfg.recalib_batches; ++i) {
    std::vector<int> idx;
    for (int b = 0; b < cfg.batch_size; ++b)
      idx.push_back(rng.uniform_int(0, calib.size() - 1));
    make_batch(calib, idx, images, targets);
    batches.push_back(images);
  }
  bn_recalibrate(view, batches);
  return evaluate_model(view.model(), eval_ds, cfg.batch_size,
                        store.head->num_classes);
}

RetrainResult retrain_standalone(const SearchSpaceConfig& space, const Genotype& genotype,
                                 const HeadSpec& head, const Dataset& train,
                                 const Dataset& eval_ds, const TrainConfig& cfg) {
  BuildOptions opts;
  if (head.task == TaskKind::Segmentation) opts.output_stride_cap = head.seg.output_stride;
  Model<float> model = build_model<float>(space, genotype, head, opts);
  Rng init_rng(derive_seed(cfg.seed, fnv1a("standalone-init")));
  init_model_params(model, init_rng);

  std::vector<ParamRef<float>> params;
  model.collect_params(params);
  Sgd<float> opt(params, cfg.sgd);
  Rng data_rng(derive_seed(cfg.seed, fnv1a("standalone"), fnv1a("data")));

  const std::int64_t steps_per_epoch =
      static_cast<std::int64_t>(train.size() / cfg.batch_size);
  const std::int64_t total_steps = steps_per_epoch * cfg.epochs;
  std::int64_t step = 0;

  RetrainResult res;
  Tensor<float> images;
  std::vector<int> targets;
  for (int e = 0; e < cfg.epochs; ++e) {
    const auto batches = epoch_batches(train.size(), cfg.batch_size, data_rng);
    double loss_acc = 0.0, lr = cfg.lr0;
    for (const auto& b : batches) {
      load_batch(train, b, cfg.augment, data_rng, images, targets);
      opt.zero_grad();
      Tensor<float> logits = model.forward(images, Mode::Train);
      LossResult<float> l = model.loss(logits, targets);
      model.backward(l.grad);
      lr = cosine_lr(step, total_steps, cfg.lr0);
      opt.step(lr);
      loss_acc += l.loss;
      ++step;
    }
    res.epochs.push_back({e, loss_acc / static_cast<double>(batches.size()), lr});
  }
  res.val = evaluate_model(model, eval_ds, cfg.batch_size, head.num_classes);
  return res;
}

}  // namespace onas
