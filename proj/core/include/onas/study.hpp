#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onas/pipeline.hpp"

namespace onas {

// Reusable study drivers behind the CLI `study` subcommand and the acceptance
// suite. Every study is a deterministic function of the pipeline config and
// seed and writes its artifacts under <run_dir>/studies/.

// Architecture sampler for ranking studies: kernels are drawn uniformly, but
// the width genes share one per-architecture base level (jittered by at most
// one step per gene). Independent per-gene width draws concentrate all
// samples at the same total capacity, which leaves nothing to rank;
// stratifying by a global level spreads the sample across the width range.
Genotype stratified_genotype(const SearchSpaceConfig& space, Rng& rng);

struct RankStudyResult {
  std::vector<std::string> genotypes;
  std::vector<double> oneshot;     // shared-weight validation score per architecture
  std::vector<double> standalone;  // mean scratch-retrained validation score
  std::vector<std::uint64_t> flops;
  double tau = 0.0;  // Kendall tau-b between the two score lists
};

// Pretrains + fine-tunes one supernet on the classification task, samples
// `architectures` stratified genotypes, and scores each twice: through the
// shared weights and by scratch retraining (averaged over `retrain_seeds`
// runs at the reduced retrain budget).
RankStudyResult rank_correlation_study(const PipelineConfig& cfg, int architectures,
                                       int retrain_seeds, const std::string& run_dir);

struct PairedStudyResult {
  double primary = 0.0;
  double baseline = 0.0;
  std::string primary_genotype;
  std::string baseline_genotype;
};

// Evolutionary search vs. random search with the same evaluation budget over
// one shared fine-tuned supernet; scores are shared-weight validation
// accuracies of the best genotype found by each.
PairedStudyResult ea_vs_random_study(const PipelineConfig& cfg, const std::string& run_dir);

// Segmentation search + evaluation with the fine-tuned supernet (primary)
// against the same flow on the merely pretrained weights under a fresh,
// untrained segmentation head (baseline, the --skip-finetune variant).
PairedStudyResult finetune_necessity_study(const PipelineConfig& cfg, const std::string& run_dir);

// Joint kernel+width search (primary) vs. kernel-only search at maximal width
// (baseline) under the same MAC budget and the same supernet.
PairedStudyResult width_ablation_study(const PipelineConfig& cfg, const std::string& run_dir);

// Dispatch by study name: "rank", "ea-vs-random", "finetune-necessity",
// "width-ablation". Returns the path of the study summary JSON.
std::string run_study(const PipelineConfig& cfg, const std::string& name,
                      const std::string& run_dir);

}  // namespace onas
