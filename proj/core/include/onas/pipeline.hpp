#pragma once

#include <optional>
#include <string>

#include "onas/evo.hpp"
#include "onas/train.hpp"

namespace onas {

struct StageParams {
  int epochs = 2;
  int batch_size = 16;
  double lr0 = 0.05;
  int paths = 5;
  bool augment = true;
};

struct SearchParams {
  int population = 20;
  int generations = 10;
  double crossover_prob = 0.5;
  double mutation_prob = 0.25;
  double constraint_fraction = 0.0;  // of the largest genotype's MACs; 0 = off
  bool width_search = true;
};

struct PipelineConfig {
  SearchSpaceConfig space;
  DatasetSpec cls_data;
  DatasetSpec seg_data;
  StageParams pretrain_params, finetune_params, retrain_params;
  SearchParams search_params;
  int recalib_batches = 4;
  std::uint64_t seed = 1;
};

PipelineConfig default_pipeline_config();
PipelineConfig pipeline_config_from_json(const std::string& text);
PipelineConfig load_pipeline_config(const std::string& path);
std::string pipeline_config_to_json(const PipelineConfig& cfg);
std::uint64_t pipeline_config_hash(const PipelineConfig& cfg);

// MACs budget implied by the configured constraint fraction (0 if off).
std::uint64_t resolve_constraint(const PipelineConfig& cfg);

// Constraint setting parser: "small"/"medium"/"large" presets (0.5/0.8/1.0 of
// the largest genotype's MACs), a fraction in (0, 1], or an absolute MAC
// budget (> 1, converted to a fraction of the space maximum).
double parse_constraint_setting(const std::string& text, const SearchSpaceConfig& space);

TrainConfig stage_train_config(const StageParams& p, std::uint64_t seed, int recalib_batches);

// Each stage writes its artifacts under `run_dir` (checkpoints/ for weight
// stores, logs/ for per-epoch CSVs, result.json for stage summaries,
// provenance.json/config.json for the run identity) and returns the primary
// result. All outputs are deterministic functions of the config and seed.
std::string run_pretrain(const PipelineConfig& cfg, const std::string& run_dir);

std::string run_finetune(const PipelineConfig& cfg, const std::string& run_dir,
                         const std::string& checkpoint, TaskKind task,
                         bool allow_scratch = false);

// Searches the shared weights loaded from `checkpoint`. The checkpoint must
// carry a fine-tuned stage tag unless `skip_finetune`, which searches the
// merely pretrained weights instead (attaching a freshly initialized head for
// `task` when the attached one does not match).
SearchResult run_search(const PipelineConfig& cfg, const std::string& run_dir,
                        const std::string& checkpoint, bool random_baseline = false,
                        bool skip_finetune = false,
                        std::optional<TaskKind> task = std::nullopt);

RetrainResult run_retrain(const PipelineConfig& cfg, const std::string& run_dir,
                          const std::string& genotype_text, TaskKind task);

MetricReport run_eval(const PipelineConfig& cfg, const std::string& checkpoint,
                      const std::string& genotype_text);

// Aggregates a run directory (provenance + stage summaries + log listing)
// into run_summary.json and returns its path. Byte-deterministic for a given
// run directory state.
std::string run_report(const std::string& run_dir);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace onas
