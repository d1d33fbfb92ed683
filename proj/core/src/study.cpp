#include "onas/study.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "onas/rank.hpp"

namespace onas {

using nlohmann::json;

namespace {

// One supernet prepared for subnet scoring: pretrained on the classification
// task, then fine-tuned for `task`.
WeightStore<float> prepared_supernet(const PipelineConfig& cfg, TaskKind task) {
  const Dataset cls_train = make_dataset(cfg.cls_data, Split::Train);
  WeightStore<float> store =
      init_weight_store<float>(cfg.space, derive_seed(cfg.seed, fnv1a("supernet")));
  pretrain(store, cls_train,
           stage_train_config(cfg.pretrain_params, cfg.seed, cfg.recalib_batches));
  HeadSpec head;
  head.task = task;
  head.num_classes = task == TaskKind::Classification ? cfg.cls_data.num_classes
                                                      : cfg.seg_data.num_classes;
  const Dataset& ft_train = task == TaskKind::Classification
                                ? cls_train
                                : make_dataset(cfg.seg_data, Split::Train);
  finetune(store, head, ft_train,
           stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches));
  return store;
}

EvoConfig evo_config(const PipelineConfig& cfg) {
  EvoConfig e;
  e.population = cfg.search_params.population;
  e.generations = cfg.search_params.generations;
  e.crossover_prob = cfg.search_params.crossover_prob;
  e.mutation_prob = cfg.search_params.mutation_prob;
  e.width_search = cfg.search_params.width_search;
  e.max_flops = resolve_constraint(cfg);
  e.seed = cfg.seed;
  return e;
}

void write_study_json(const std::string& run_dir, const std::string& name, const json& j) {
  write_text_file(run_dir + "/studies/" + name + ".json", j.dump(2) + "\n");
}

json paired_json(const PairedStudyResult& r) {
  return {{"primary", r.primary},
          {"baseline", r.baseline},
          {"primary_genotype", r.primary_genotype},
          {"baseline_genotype", r.baseline_genotype}};
}

}  // namespace

Genotype stratified_genotype(const SearchSpaceConfig& space, Rng& rng) {
  const auto& exps = space.expansion_choices;
  const int levels = static_cast<int>(exps.size());
  const int base = static_cast<int>(rng.uniform_int(0, levels - 1));
  Genotype g = random_genotype(space, rng);  // uniform kernels (widths rewritten below)
  for (auto& gene : g.genes) {
    const int j = std::clamp(base + static_cast<int>(rng.uniform_int(-1, 1)), 0, levels - 1);
    gene.expansion = exps[static_cast<std::size_t>(j)];
  }
  return g;
}

RankStudyResult rank_correlation_study(const PipelineConfig& cfg, int architectures,
                                       int retrain_seeds, const std::string& run_dir) {
  if (architectures < 2) throw ConfigError("rank study: need at least 2 architectures");
  if (retrain_seeds < 1) throw ConfigError("rank study: need at least 1 retrain seed");
  WeightStore<float> store = prepared_supernet(cfg, TaskKind::Classification);
  const Dataset train = make_dataset(cfg.cls_data, Split::Train);
  const Dataset val = make_dataset(cfg.cls_data, Split::Val);
  const TrainConfig eval_cfg =
      stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches);
  const HeadSpec head{TaskKind::Classification, cfg.cls_data.num_classes, {}};

  RankStudyResult res;
  Rng rng(derive_seed(cfg.seed, fnv1a("rank-sample")));
  for (int i = 0; i < architectures; ++i) {
    const Genotype g = stratified_genotype(cfg.space, rng);
    res.genotypes.push_back(encode_genotype(g));
    res.flops.push_back(count_resources(cfg.space, g).flops);
    res.oneshot.push_back(evaluate_subnet(store, g, train, val, eval_cfg).overall_accuracy);
    double mean = 0.0;
    for (int s = 0; s < retrain_seeds; ++s) {
      TrainConfig rt =
          stage_train_config(cfg.retrain_params, cfg.seed, cfg.recalib_batches);
      rt.seed = derive_seed(cfg.seed, fnv1a("rank-retrain"), static_cast<std::uint64_t>(s));
      mean += retrain_standalone(cfg.space, g, head, train, val, rt).val.overall_accuracy;
    }
    res.standalone.push_back(mean / retrain_seeds);
  }
  res.tau = kendall_tau(res.oneshot, res.standalone);

  std::ostringstream csv;
  csv << "genotype,flops,oneshot,standalone\n";
  for (std::size_t i = 0; i < res.genotypes.size(); ++i)
    csv << res.genotypes[i] << "," << res.flops[i] << "," << res.oneshot[i] << ","
        << res.standalone[i] << "\n";
  write_text_file(run_dir + "/studies/rank.csv", csv.str());
  write_study_json(run_dir, "rank",
                   {{"tau", res.tau},
                    {"architectures", architectures},
                    {"retrain_seeds", retrain_seeds},
                    {"ensemble_paths", cfg.pretrain_params.paths}});
  return res;
}

PairedStudyResult ea_vs_random_study(const PipelineConfig& cfg, const std::string& run_dir) {
  WeightStore<float> store = prepared_supernet(cfg, TaskKind::Classification);
  const Dataset train = make_dataset(cfg.cls_data, Split::Train);
  const Dataset val = make_dataset(cfg.cls_data, Split::Val);
  const TrainConfig eval_cfg =
      stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches);
  const FitnessFn fitness = [&](const Genotype& g) {
    return evaluate_subnet(store, g, train, val, eval_cfg).overall_accuracy;
  };
  const EvoConfig ecfg = evo_config(cfg);
  const SearchResult ea = evolutionary_search(cfg.space, ecfg, fitness);
  const SearchResult rnd = random_search(cfg.space, ecfg, fitness);
  PairedStudyResult res{ea.best.fitness, rnd.best.fitness, encode_genotype(ea.best.genotype),
                        encode_genotype(rnd.best.genotype)};
  write_study_json(run_dir, "ea-vs-random", paired_json(res));
  return res;
}

PairedStudyResult finetune_necessity_study(const PipelineConfig& cfg,
                                           const std::string& run_dir) {
  const Dataset cls_train = make_dataset(cfg.cls_data, Split::Train);
  const Dataset seg_train = make_dataset(cfg.seg_data, Split::Train);
  const Dataset seg_val = make_dataset(cfg.seg_data, Split::Val);
  const TrainConfig eval_cfg =
      stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches);
  const HeadSpec seg_head{TaskKind::Segmentation, cfg.seg_data.num_classes, {}};

  WeightStore<float> pretrained =
      init_weight_store<float>(cfg.space, derive_seed(cfg.seed, fnv1a("supernet")));
  pretrain(pretrained, cls_train,
           stage_train_config(cfg.pretrain_params, cfg.seed, cfg.recalib_batches));

  // --skip-finetune variant: the pretrained backbone under a fresh untrained
  // segmentation head (BN recalibration only happens inside evaluate_subnet).
  WeightStore<float> skipped = pretrained;
  detach_head(skipped);
  attach_head(skipped, seg_head, derive_seed(cfg.seed, fnv1a("skip-finetune-head")));

  WeightStore<float> tuned = std::move(pretrained);
  finetune(tuned, seg_head, seg_train,
           stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches));

  const EvoConfig ecfg = evo_config(cfg);
  PairedStudyResult res;
  {
    const FitnessFn fit = [&](const Genotype& g) {
      return evaluate_subnet(tuned, g, seg_train, seg_val, eval_cfg).overall_accuracy;
    };
    const SearchResult sr = evolutionary_search(cfg.space, ecfg, fit);
    res.primary = sr.best.fitness;
    res.primary_genotype = encode_genotype(sr.best.genotype);
  }
  {
    const FitnessFn fit = [&](const Genotype& g) {
      return evaluate_subnet(skipped, g, seg_train, seg_val, eval_cfg).overall_accuracy;
    };
    const SearchResult sr = evolutionary_search(cfg.space, ecfg, fit);
    res.baseline = sr.best.fitness;
    res.baseline_genotype = encode_genotype(sr.best.genotype);
  }
  write_study_json(run_dir, "finetune-necessity", paired_json(res));
  return res;
}

PairedStudyResult width_ablation_study(const PipelineConfig& cfg, const std::string& run_dir) {
  WeightStore<float> store = prepared_supernet(cfg, TaskKind::Classification);
  const Dataset train = make_dataset(cfg.cls_data, Split::Train);
  const Dataset val = make_dataset(cfg.cls_data, Split::Val);
  const TrainConfig eval_cfg =
      stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches);
  const FitnessFn fitness = [&](const Genotype& g) {
    return evaluate_subnet(store, g, train, val, eval_cfg).overall_accuracy;
  };
  EvoConfig joint = evo_config(cfg);
  joint.width_search = true;
  EvoConfig fixed = joint;
  fixed.width_search = false;
  const SearchResult a = evolutionary_search(cfg.space, joint, fitness);
  const SearchResult b = evolutionary_search(cfg.space, fixed, fitness);
  PairedStudyResult res{a.best.fitness, b.best.fitness, encode_genotype(a.best.genotype),
                        encode_genotype(b.best.genotype)};
  write_study_json(run_dir, "width-ablation", paired_json(res));
  return res;
}

std::string run_study(const PipelineConfig& cfg, const std::string& name,
                      const std::string& run_dir) {
  if (name == "rank")
    rank_correlation_study(cfg, 20, 2, run_dir);
  else if (name == "ea-vs-random")
    ea_vs_random_study(cfg, run_dir);
  else if (name == "finetune-necessity")
    finetune_necessity_study(cfg, run_dir);
  else if (name == "width-ablation")
    width_ablation_study(cfg, run_dir);
  else
    throw ConfigError("unknown study '" + name +
                      "' (rank|ea-vs-random|finetune-necessity|width-ablation)");
  return run_dir + "/studies/" + name + ".json";
}

}  // namespace onas
