#include "onas/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace onas {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json stage_to_json(const StageParams& p) {
  return {{"epochs", p.epochs},
          {"batch_size", p.batch_size},
          {"lr0", p.lr0},
          {"paths", p.paths},
          {"augment", p.augment}};
}

StageParams stage_from_json(const json& j, StageParams d) {
  d.epochs = j.value("epochs", d.epochs);
  d.batch_size = j.value("batch_size", d.batch_size);
  d.lr0 = j.value("lr0", d.lr0);
  d.paths = j.value("paths", d.paths);
  d.augment = j.value("augment", d.augment);
  return d;
}

json data_to_json(const DatasetSpec& s) {
  return {{"segmentation", s.segmentation}, {"num_classes", s.num_classes},
          {"resolution", s.resolution},     {"channels", s.channels},
          {"train_size", s.train_size},     {"val_size", s.val_size},
          {"test_size", s.test_size},       {"noise_std", s.noise_std},
          {"seed", s.seed}};
}

DatasetSpec data_from_json(const json& j, DatasetSpec d) {
  d.segmentation = j.value("segmentation", d.segmentation);
  d.num_classes = j.value("num_classes", d.num_classes);
  d.resolution = j.value("resolution", d.resolution);
  d.channels = j.value("channels", d.channels);
  d.train_size = j.value("train_size", d.train_size);
  d.val_size = j.value("val_size", d.val_size);
  d.test_size = j.value("test_size", d.test_size);
  d.noise_std = j.value("noise_std", d.noise_std);
  d.seed = j.value("seed", d.seed);
  return d;
}

HeadSpec head_for(const PipelineConfig& cfg, TaskKind task) {
  HeadSpec h;
  h.task = task;
  h.num_classes =
      task == TaskKind::Classification ? cfg.cls_data.num_classes : cfg.seg_data.num_classes;
  return h;
}

const DatasetSpec& data_for(const PipelineConfig& cfg, TaskKind task) {
  return task == TaskKind::Classification ? cfg.cls_data : cfg.seg_data;
}

void write_provenance(const PipelineConfig& cfg, const std::string& run_dir,
                      const std::string& stage) {
  json j;
  j["stage"] = stage;
  j["seed"] = cfg.seed;
  j["config_hash"] = hex64(pipeline_config_hash(cfg));
  j["space_hash"] = hex64(space_hash(cfg.space));
  write_text_file(run_dir + "/provenance.json", j.dump(2) + "\n");
  write_text_file(run_dir + "/config.json", pipeline_config_to_json(cfg));
}

// result.json accumulates one summary entry per stage; rewriting the same
// stage with the same entry is idempotent, so reruns stay byte-identical.
void update_result(const std::string& run_dir, const std::string& stage, const json& entry) {
  const std::string path = run_dir + "/result.json";
  json j = fs::exists(path) ? json::parse(read_text_file(path)) : json::object();
  j[stage] = entry;
  write_text_file(path, j.dump(2) + "\n");
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw UsageError("cannot write " + path);
  out << text;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

PipelineConfig default_pipeline_config() {
  PipelineConfig cfg;
  cfg.space = desk_space();
  cfg.cls_data.segmentation = false;
  cfg.cls_data.num_classes = 4;
  cfg.cls_data.resolution = cfg.space.input_resolution;
  cfg.seg_data = cfg.cls_data;
  cfg.seg_data.segmentation = true;
  cfg.seg_data.seed = 2;
  cfg.finetune_params.lr0 = 0.02;
  cfg.retrain_params.epochs = 3;
  return cfg;
}

std::string pipeline_config_to_json(const PipelineConfig& cfg) {
  json j;
  j["space"] = json::parse(space_to_json(cfg.space));
  j["cls_data"] = data_to_json(cfg.cls_data);
  j["seg_data"] = data_to_json(cfg.seg_data);
  j["pretrain"] = stage_to_json(cfg.pretrain_params);
  j["finetune"] = stage_to_json(cfg.finetune_params);
  j["retrain"] = stage_to_json(cfg.retrain_params);
  j["search"] = {{"population", cfg.search_params.population},
                 {"generations", cfg.search_params.generations},
                 {"crossover_prob", cfg.search_params.crossover_prob},
                 {"mutation_prob", cfg.search_params.mutation_prob},
                 {"constraint_fraction", cfg.search_params.constraint_fraction},
                 {"width_search", cfg.search_params.width_search}};
  j["recalib_batches"] = cfg.recalib_batches;
  j["seed"] = cfg.seed;
  return j.dump(2) + "\n";
}

PipelineConfig pipeline_config_from_json(const std::string& text) {
  PipelineConfig cfg = default_pipeline_config();
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  try {
    if (j.contains("space")) {
      if (j["space"].is_string()) {
        const std::string name = j["space"].get<std::string>();
        if (name == "desk")
          cfg.space = desk_space();
        else if (name == "fullscale")
          cfg.space = fullscale_space();
        else
          throw ConfigError("config: unknown space preset '" + name + "'");
      } else {
        cfg.space = space_from_json(j["space"].dump());
      }
    }
    if (j.contains("cls_data")) cfg.cls_data = data_from_json(j["cls_data"], cfg.cls_data);
    if (j.contains("seg_data")) cfg.seg_data = data_from_json(j["seg_data"], cfg.seg_data);
    if (j.contains("pretrain")) cfg.pretrain_params = stage_from_json(j["pretrain"], cfg.pretrain_params);
    if (j.contains("finetune")) cfg.finetune_params = stage_from_json(j["finetune"], cfg.finetune_params);
    if (j.contains("retrain")) cfg.retrain_params = stage_from_json(j["retrain"], cfg.retrain_params);
    if (j.contains("search")) {
      const auto& s = j["search"];
      auto& p = cfg.search_params;
      p.population = s.value("population", p.population);
      p.generations = s.value("generations", p.generations);
      p.crossover_prob = s.value("crossover_prob", p.crossover_prob);
      p.mutation_prob = s.value("mutation_prob", p.mutation_prob);
      p.constraint_fraction = s.value("constraint_fraction", p.constraint_fraction);
      p.width_search = s.value("width_search", p.width_search);
    }
    cfg.recalib_batches = j.value("recalib_batches", cfg.recalib_batches);
    cfg.seed = j.value("seed", cfg.seed);
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  validate_space(cfg.space);
  if (cfg.cls_data.resolution != cfg.space.input_resolution ||
      cfg.seg_data.resolution != cfg.space.input_resolution)
    throw ConfigError("config: dataset resolution must match the space input resolution");
  if (cfg.search_params.constraint_fraction < 0 || cfg.search_params.constraint_fraction > 1)
    throw ConfigError("config: constraint_fraction must lie in [0, 1]");
  return cfg;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(read_text_file(path));
}

std::uint64_t pipeline_config_hash(const PipelineConfig& cfg) {
  return fnv1a(pipeline_config_to_json(cfg));
}

std::uint64_t resolve_constraint(const PipelineConfig& cfg) {
  if (cfg.search_params.constraint_fraction <= 0) return 0;
  const std::uint64_t max_flops =
      count_resources(cfg.space, max_genotype(cfg.space)).flops;
  return static_cast<std::uint64_t>(cfg.search_params.constraint_fraction *
                                    static_cast<double>(max_flops));
}

TrainConfig stage_train_config(const StageParams& p, std::uint64_t seed, int recalib_batches) {
  TrainConfig t;
  t.epochs = p.epochs;
  t.batch_size = p.batch_size;
  t.lr0 = p.lr0;
  t.ensemble_paths = p.paths;
  t.augment = p.augment;
  t.recalib_batches = recalib_batches;
  t.seed = seed;
  return t;
}

std::string run_pretrain(const PipelineConfig& cfg, const std::string& run_dir) {
  fs::create_directories(run_dir);
  const Dataset train = make_dataset(cfg.cls_data, Split::Train);
  WeightStore<float> store =
      init_weight_store<float>(cfg.space, derive_seed(cfg.seed, fnv1a("supernet")));
  const auto stats =
      pretrain(store, train, stage_train_config(cfg.pretrain_params, cfg.seed, cfg.recalib_batches));
  write_text_file(run_dir + "/logs/pretrain_epochs.csv", epochs_to_csv(stats));
  const std::string ckpt = run_dir + "/checkpoints/supernet_pretrained";
  save_checkpoint(store, ckpt);
  write_provenance(cfg, run_dir, "pretrain");
  update_result(run_dir, "pretrain",
                {{"checkpoint", "checkpoints/supernet_pretrained"},
                 {"epochs", stats.size()},
                 {"final_loss", stats.empty() ? 0.0 : stats.back().mean_loss}});
  return ckpt;
}

std::string run_finetune(const PipelineConfig& cfg, const std::string& run_dir,
                         const std::string& checkpoint, TaskKind task, bool allow_scratch) {
  fs::create_directories(run_dir);
  WeightStore<float> store = load_checkpoint(checkpoint, &cfg.space);
  const Dataset train = make_dataset(data_for(cfg, task), Split::Train);
  const auto stats = finetune(store, head_for(cfg, task), train,
                              stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches),
                              allow_scratch);
  const std::string stage = std::string("finetune-") + task_name(task);
  write_text_file(run_dir + "/logs/" + stage + "_epochs.csv", epochs_to_csv(stats));
  const std::string ckpt =
      run_dir + "/checkpoints/supernet_finetuned_" + task_name(task);
  save_checkpoint(store, ckpt);
  write_provenance(cfg, run_dir, stage);
  update_result(run_dir, stage,
                {{"checkpoint", std::string("checkpoints/supernet_finetuned_") + task_name(task)},
                 {"epochs", stats.size()},
                 {"final_loss", stats.empty() ? 0.0 : stats.back().mean_loss}});
  return ckpt;
}

SearchResult run_search(const PipelineConfig& cfg, const std::string& run_dir,
                        const std::string& checkpoint, bool random_baseline,
                        bool skip_finetune, std::optional<TaskKind> task_request) {
  fs::create_directories(run_dir);
  WeightStore<float> store = load_checkpoint(checkpoint, &cfg.space);
  if (!skip_finetune && store.stage_tag.rfind("finetuned:", 0) != 0)
    throw StageGuardError("search requires a fine-tuned checkpoint (stage '" + store.stage_tag +
                          "'); run finetune first or pass --skip-finetune");
  if (skip_finetune && task_request &&
      (!store.head || store.head->task != *task_request)) {
    // "without fine-tuning" ablation: search the pretrained shared weights
    // under a freshly initialized head for the requested task.
    if (store.head) detach_head(store);
    HeadSpec h = head_for(cfg, *task_request);
    attach_head(store, h, derive_seed(cfg.seed, fnv1a("skip-finetune-head")));
  }
  if (!store.head) throw StageGuardError("search expects a checkpoint with a task head");
  const TaskKind task =
      store.head->task;
  const DatasetSpec& dspec = data_for(cfg, task);
  const Dataset calib = make_dataset(dspec, Split::Train);
  const Dataset val = make_dataset(dspec, Split::Val);
  const TrainConfig eval_cfg =
      stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches);

  EvoConfig ecfg;
  ecfg.population = cfg.search_params.population;
  ecfg.generations = cfg.search_params.generations;
  ecfg.crossover_prob = cfg.search_params.crossover_prob;
  ecfg.mutation_prob = cfg.search_params.mutation_prob;
  ecfg.width_search = cfg.search_params.width_search;
  ecfg.max_flops = resolve_constraint(cfg);
  ecfg.seed = cfg.seed;

  FitnessFn fitness = [&](const Genotype& g) {
    return evaluate_subnet(store, g, calib, val, eval_cfg).overall_accuracy;
  };
  const SearchResult res = random_baseline ? random_search(cfg.space, ecfg, fitness)
                                           : evolutionary_search(cfg.space, ecfg, fitness);
  const std::string tag = random_baseline ? "random" : "evolution";
  write_text_file(run_dir + "/logs/search_" + tag + ".csv", history_to_csv(res.history));
  json j;
  j["algorithm"] = tag;
  j["best_genotype"] = encode_genotype(res.best.genotype);
  j["best_fitness"] = res.best.fitness;
  j["best_flops"] = res.best.flops;
  j["evaluations"] = res.evaluations;
  j["constraint_flops"] = ecfg.max_flops;
  j["skip_finetune"] = skip_finetune;
  write_text_file(run_dir + "/search_" + tag + ".json", j.dump(2) + "\n");
  write_provenance(cfg, run_dir, "search-" + tag);
  update_result(run_dir, "search-" + tag, j);
  return res;
}

RetrainResult run_retrain(const PipelineConfig& cfg, const std::string& run_dir,
                          const std::string& genotype_text, TaskKind task) {
  fs::create_directories(run_dir);
  const Genotype g = decode_genotype(genotype_text, cfg.space);
  const DatasetSpec& dspec = data_for(cfg, task);
  const Dataset train = make_dataset(dspec, Split::Train);
  const Dataset test = make_dataset(dspec, Split::Test);
  const RetrainResult res =
      retrain_standalone(cfg.space, g, head_for(cfg, task), train, test,
                         stage_train_config(cfg.retrain_params, cfg.seed, cfg.recalib_batches));
  const std::string stage = std::string("retrain-") + task_name(task);
  write_text_file(run_dir + "/logs/" + stage + "_epochs.csv", epochs_to_csv(res.epochs));
  write_text_file(run_dir + "/retrain_metrics.json", res.val.to_json() + "\n");
  write_provenance(cfg, run_dir, stage);
  update_result(run_dir, stage,
                {{"genotype", genotype_text},
                 {"overall_accuracy", res.val.overall_accuracy},
                 {"mean_iou", res.val.mean_iou},
                 {"epochs", res.epochs.size()}});
  return res;
}

MetricReport run_eval(const PipelineConfig& cfg, const std::string& checkpoint,
                      const std::string& genotype_text) {
  WeightStore<float> store = load_checkpoint(checkpoint, &cfg.space);
  if (!store.head) throw StageGuardError("eval expects a checkpoint with a task head");
  const Genotype g = decode_genotype(genotype_text, cfg.space);
  const DatasetSpec& dspec = data_for(cfg, store.head->task);
  const Dataset calib = make_dataset(dspec, Split::Train);
  const Dataset test = make_dataset(dspec, Split::Test);
  return evaluate_subnet(store, g, calib, test,
                         stage_train_config(cfg.finetune_params, cfg.seed, cfg.recalib_batches));
}

std::string run_report(const std::string& run_dir) {
  if (!fs::is_directory(run_dir)) throw UsageError("report: no run directory at " + run_dir);
  json summary;
  const std::string prov = run_dir + "/provenance.json";
  if (!fs::exists(prov)) throw UsageError("report: " + prov + " missing; run a stage first");
  summary["provenance"] = json::parse(read_text_file(prov));
  const std::string result = run_dir + "/result.json";
  summary["stages"] = fs::exists(result) ? json::parse(read_text_file(result)) : json::object();
  std::vector<std::string> logs;
  if (fs::is_directory(run_dir + "/logs"))
    for (const auto& e : fs::directory_iterator(run_dir + "/logs"))
      if (e.is_regular_file()) logs.push_back(e.path().filename().string());
  std::sort(logs.begin(), logs.end());
  summary["logs"] = logs;
  const std::string path = run_dir + "/run_summary.json";
  write_text_file(path, summary.dump(2) + "\n");
  return path;
}

double parse_constraint_setting(const std::string& text, const SearchSpaceConfig& space) {
  if (text == "small") return 0.5;
  if (text == "medium") return 0.8;
  if (text == "large") return 1.0;
  double v = 0;
  std::size_t used = 0;
  try {
    v = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("constraint: expected small|medium|large or a number, got '" + text + "'");
  }
  if (used != text.size() || v <= 0)
    throw ConfigError("constraint: expected small|medium|large or a positive number, got '" +
                      text + "'");
  if (v <= 1.0) return v;
  // absolute MAC budget: express it as a fraction of the largest genotype
  const double max_flops =
      static_cast<double>(count_resources(space, max_genotype(space)).flops);
  return std::min(1.0, v / max_flops);
}

}  // namespace onas
