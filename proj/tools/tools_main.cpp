// Command-line front end for the architecture search pipeline.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "onas/pipeline.hpp"
#include "onas/study.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;      // bad config / usage / parse failures
constexpr int kExitConstraint = 3;  // infeasible constraints, stage guards
constexpr int kExitData = 4;        // dataset or checkpoint integrity problems

onas::TaskKind parse_task(const std::string& s) {
  if (s == "classification") return onas::TaskKind::Classification;
  if (s == "segmentation") return onas::TaskKind::Segmentation;
  throw onas::ConfigError("unknown task '" + s + "' (classification|segmentation)");
}

onas::PipelineConfig make_config(const std::string& config_path, std::int64_t seed_override,
                                 const std::string& constraint_override) {
  onas::PipelineConfig cfg = config_path.empty() ? onas::default_pipeline_config()
                                                 : onas::load_pipeline_config(config_path);
  if (seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(seed_override);
  if (!constraint_override.empty())
    cfg.search_params.constraint_fraction =
        onas::parse_constraint_setting(constraint_override, cfg.space);
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"one-shot architecture search pipeline"};
  app.require_subcommand(1);

  std::string config_path, run_dir = "run", checkpoint, genotype, task_str = "classification";
  std::string constraint_override, study_name;
  std::int64_t seed_override = -1;
  int jobs = 1;
  bool allow_scratch = false, random_baseline = false, skip_finetune = false;
  bool deterministic = false;

  app.add_option("--config", config_path, "pipeline config JSON (defaults when omitted)");
  app.add_option("--run-dir", run_dir, "output directory");
  app.add_option("--seed", seed_override, "override the config seed");
  app.add_option("--jobs", jobs, "worker parallelism cap (this build computes serially)");
  app.add_flag("--deterministic", deterministic,
               "accepted for interface stability; outputs are always deterministic");

  auto* c_pre = app.add_subcommand("pretrain", "train the shared supernet weights");

  auto* c_fin = app.add_subcommand("finetune", "width-inclusive fine-tuning for a task");
  c_fin->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
  c_fin->add_option("--task", task_str, "classification|segmentation");
  c_fin->add_flag("--allow-scratch", allow_scratch,
                  "permit fine-tuning from a non-pretrained store");

  auto* c_sea = app.add_subcommand("search", "evolutionary architecture search");
  c_sea->add_option("--checkpoint", checkpoint, "fine-tuned checkpoint")->required();
  c_sea->add_flag("--random-baseline", random_baseline,
                  "random search with the same evaluation budget");
  c_sea->add_flag("--skip-finetune", skip_finetune,
                  "search a merely pretrained checkpoint (ablation)");
  c_sea->add_option("--task", task_str, "classification|segmentation");
  c_sea->add_option("--constraint", constraint_override,
                    "MAC budget: small|medium|large, a fraction, or absolute MACs");

  auto* c_ret = app.add_subcommand("retrain", "train one architecture from scratch");
  c_ret->add_option("--genotype", genotype, "genotype string")->required();
  c_ret->add_option("--task", task_str, "classification|segmentation");

  auto* c_eval = app.add_subcommand("eval", "evaluate a subnet from a checkpoint");
  c_eval->add_option("--checkpoint", checkpoint, "checkpoint with a task head")->required();
  c_eval->add_option("--genotype", genotype, "genotype string")->required();

  auto* c_val = app.add_subcommand("validate", "check a config file and print it resolved");

  auto* c_stu = app.add_subcommand("study", "run a named ablation study");
  c_stu->add_option("--name", study_name,
                    "rank|ea-vs-random|finetune-necessity|width-ablation")
      ->required();

  auto* c_rep = app.add_subcommand("report", "aggregate a run directory into a summary");

  CLI11_PARSE(app, argc, argv);

  try {
    if (jobs < 1) throw onas::ConfigError("--jobs must be at least 1");
    const onas::PipelineConfig cfg =
        make_config(config_path, seed_override, constraint_override);
    if (c_pre->parsed()) {
      std::cout << onas::run_pretrain(cfg, run_dir) << "\n";
    } else if (c_fin->parsed()) {
      std::cout << onas::run_finetune(cfg, run_dir, checkpoint, parse_task(task_str),
                                      allow_scratch)
                << "\n";
    } else if (c_sea->parsed()) {
      const onas::SearchResult res =
          onas::run_search(cfg, run_dir, checkpoint, random_baseline, skip_finetune,
                           skip_finetune ? std::optional(parse_task(task_str)) : std::nullopt);
      std::cout << onas::encode_genotype(res.best.genotype) << "\n";
    } else if (c_ret->parsed()) {
      const onas::RetrainResult res =
          onas::run_retrain(cfg, run_dir, genotype, parse_task(task_str));
      std::cout << res.val.overall_accuracy << "\n";
    } else if (c_eval->parsed()) {
      std::cout << onas::run_eval(cfg, checkpoint, genotype).to_json() << "\n";
    } else if (c_val->parsed()) {
      std::cout << onas::pipeline_config_to_json(cfg);
    } else if (c_stu->parsed()) {
      std::cout << onas::run_study(cfg, study_name, run_dir) << "\n";
    } else if (c_rep->parsed()) {
      std::cout << onas::run_report(run_dir) << "\n";
    }
  } catch (const onas::ConstraintError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConstraint;
  } catch (const onas::StageGuardError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConstraint;
  } catch (const onas::CheckpointError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const onas::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const onas::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const onas::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const onas::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
