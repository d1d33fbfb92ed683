// Tests for the pipeline layer: config round-trips and validation, stage
// execution with artifacts on disk, and byte-identical reruns.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "onas/pipeline.hpp"
#include "test_support.hpp"

using namespace onas;
namespace fs = std::filesystem;

namespace {

// Desk-scale layout shrunk to a quick-to-train footprint.
PipelineConfig mini_config() {
  PipelineConfig cfg = default_pipeline_config();
  cfg.space.input_resolution = 16;
  cfg.space.stages = {{1, 12, 2, Act::ReLU}, {1, 16, 1, Act::Swish}};
  cfg.space.expansion_choices = {2.0, 4.0, 6.0};
  cfg.cls_data.resolution = 16;
  cfg.cls_data.train_size = 64;
  cfg.cls_data.val_size = 16;
  cfg.cls_data.test_size = 16;
  cfg.seg_data = cfg.cls_data;
  cfg.seg_data.segmentation = true;
  cfg.seg_data.seed = 2;
  cfg.pretrain_params = {1, 8, 0.05, 2, false};
  cfg.finetune_params = {1, 8, 0.02, 1, false};
  cfg.retrain_params = {1, 8, 0.05, 1, false};
  cfg.search_params.population = 4;
  cfg.search_params.generations = 2;
  cfg.recalib_batches = 2;
  cfg.seed = 5;
  return cfg;
}

std::string tmp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("onas_pipeline_" + tag);
  fs::remove_all(p);
  return p.string();
}

}  // namespace

TEST_CASE("pipeline config round-trips through JSON with a stable hash") {
  const PipelineConfig cfg = default_pipeline_config();
  const std::string text = pipeline_config_to_json(cfg);
  const PipelineConfig back = pipeline_config_from_json(text);
  CHECK(pipeline_config_to_json(back) == text);
  CHECK(pipeline_config_hash(back) == pipeline_config_hash(cfg));
  CHECK(back.space.input_resolution == 32);
  CHECK(back.cls_data.num_classes == 4);
  CHECK(back.seg_data.segmentation);
}

TEST_CASE("config parsing accepts presets and partial overrides") {
  const auto cfg = pipeline_config_from_json(R"({"space": "desk", "seed": 42,
    "search": {"population": 9}, "pretrain": {"epochs": 7}})");
  CHECK(cfg.seed == 42);
  CHECK(cfg.search_params.population == 9);
  CHECK(cfg.search_params.generations == 10);  // default kept
  CHECK(cfg.pretrain_params.epochs == 7);
  CHECK(space_hash(cfg.space) == space_hash(desk_space()));
  const auto full = pipeline_config_from_json(
      R"({"space": "fullscale", "cls_data": {"resolution": 224},
          "seg_data": {"resolution": 224}})");
  CHECK(full.space.input_resolution == 224);
}

TEST_CASE("config validation rejects malformed input") {
  CHECK_THROWS_AS(pipeline_config_from_json("{nope"), ParseError);
  CHECK_THROWS_AS(pipeline_config_from_json(R"({"space": "galactic"})"), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json(R"({"cls_data": {"resolution": 64}})"), ConfigError);
  CHECK_THROWS_AS(
      pipeline_config_from_json(R"({"search": {"constraint_fraction": 1.5}})"), ConfigError);
  CHECK_THROWS_AS(pipeline_config_from_json(R"({"seed": "abc"})"), ParseError);
}

TEST_CASE("the constraint fraction resolves against the largest genotype") {
  PipelineConfig cfg = default_pipeline_config();
  CHECK(resolve_constraint(cfg) == 0);  // off by default
  cfg.search_params.constraint_fraction = 0.5;
  const auto max_macs = count_resources(cfg.space, max_genotype(cfg.space)).flops;
  CHECK(resolve_constraint(cfg) ==
        static_cast<std::uint64_t>(0.5 * static_cast<double>(max_macs)));
  cfg.search_params.constraint_fraction = 1.0;
  CHECK(resolve_constraint(cfg) == static_cast<std::uint64_t>(max_macs));
}

TEST_CASE("stage parameters map onto the training configuration") {
  const StageParams p{3, 32, 0.1, 7, false};
  const TrainConfig t = stage_train_config(p, 99, 6);
  CHECK(t.epochs == 3);
  CHECK(t.batch_size == 32);
  CHECK(t.lr0 == 0.1);
  CHECK(t.ensemble_paths == 7);
  CHECK(!t.augment);
  CHECK(t.recalib_batches == 6);
  CHECK(t.seed == 99);
}

TEST_CASE("stages run end to end and leave their artifacts behind") {
  const PipelineConfig cfg = mini_config();
  const std::string dir = tmp_dir("stages");

  const std::string pre = run_pretrain(cfg, dir);
  CHECK(fs::exists(fs::path(pre) / "manifest.json"));
  CHECK(fs::exists(fs::path(dir) / "logs" / "pretrain_epochs.csv"));
  CHECK(fs::exists(fs::path(dir) / "result.json"));
  CHECK(fs::exists(fs::path(dir) / "provenance.json"));
  CHECK(fs::exists(fs::path(dir) / "config.json"));
  {
    auto store = load_checkpoint(pre, &cfg.space);
    CHECK(store.stage_tag == stage::kPretrained);
    REQUIRE(store.head.has_value());
    CHECK(store.head->task == TaskKind::Classification);
  }

  const std::string ft = run_finetune(cfg, dir, pre, TaskKind::Classification);
  CHECK(load_checkpoint(ft).stage_tag == stage::finetuned(TaskKind::Classification));
  CHECK(fs::exists(fs::path(dir) / "logs" / "finetune-classification_epochs.csv"));

  const SearchResult res = run_search(cfg, dir, ft);
  CHECK(fs::exists(fs::path(dir) / "logs" / "search_evolution.csv"));
  CHECK(fs::exists(fs::path(dir) / "search_evolution.json"));
  CHECK(res.best.fitness >= 0.0);
  validate_genotype(cfg.space, res.best.genotype);

  const SearchResult rnd = run_search(cfg, dir, ft, /*random_baseline=*/true);
  CHECK(fs::exists(fs::path(dir) / "logs" / "search_random.csv"));
  CHECK(rnd.evaluations ==
        static_cast<std::int64_t>(cfg.search_params.population) *
            (cfg.search_params.generations + 1));

  const RetrainResult rt =
      run_retrain(cfg, dir, encode_genotype(res.best.genotype), TaskKind::Classification);
  CHECK(fs::exists(fs::path(dir) / "logs" / "retrain-classification_epochs.csv"));
  CHECK(fs::exists(fs::path(dir) / "retrain_metrics.json"));
  CHECK(rt.val.overall_accuracy >= 0.0);

  const MetricReport ev = run_eval(cfg, ft, encode_genotype(res.best.genotype));
  CHECK(ev.overall_accuracy >= 0.0);
  CHECK(ev.overall_accuracy <= 1.0);
  fs::remove_all(dir);
}

TEST_CASE("segmentation fine-tuning flows from a classification pretrain") {
  const PipelineConfig cfg = mini_config();
  const std::string dir = tmp_dir("seg");
  const std::string pre = run_pretrain(cfg, dir);
  const std::string ft = run_finetune(cfg, dir, pre, TaskKind::Segmentation);
  auto store = load_checkpoint(ft);
  CHECK(store.stage_tag == stage::finetuned(TaskKind::Segmentation));
  REQUIRE(store.head.has_value());
  CHECK(store.head->task == TaskKind::Segmentation);
  // per-pixel evaluation works on the searched checkpoint
  const MetricReport ev = run_eval(cfg, ft, encode_genotype(max_genotype(cfg.space)));
  CHECK(ev.count ==
        static_cast<std::int64_t>(cfg.seg_data.test_size) * 16 * 16);
  fs::remove_all(dir);
}

TEST_CASE("fine-tuning an uninitialized checkpoint trips the stage guard") {
  const PipelineConfig cfg = mini_config();
  const std::string dir = tmp_dir("guard");
  auto store = init_weight_store<float>(cfg.space, 1);
  const std::string raw = dir + "/raw";
  save_checkpoint(store, raw);
  CHECK_THROWS_AS(run_finetune(cfg, dir, raw, TaskKind::Classification), StageGuardError);
  // allow_scratch lets it proceed
  const std::string ft = run_finetune(cfg, dir, raw, TaskKind::Classification, true);
  CHECK(load_checkpoint(ft).stage_tag == stage::finetuned(TaskKind::Classification));
  // search on a headless checkpoint is refused
  CHECK_THROWS_AS(run_search(cfg, dir, raw), StageGuardError);
  fs::remove_all(dir);
}

TEST_CASE("search refuses a merely pretrained checkpoint unless skip-finetune") {
  const PipelineConfig cfg = mini_config();
  const std::string dir = tmp_dir("skipft");
  const std::string pre = run_pretrain(cfg, dir);
  CHECK_THROWS_AS(run_search(cfg, dir, pre), StageGuardError);
  // the ablation path: search the pretrained weights directly
  const SearchResult res =
      run_search(cfg, dir, pre, false, /*skip_finetune=*/true, TaskKind::Classification);
  validate_genotype(cfg.space, res.best.genotype);
  // a task mismatch attaches a fresh head for the requested task
  const SearchResult seg =
      run_search(cfg, dir, pre, false, /*skip_finetune=*/true, TaskKind::Segmentation);
  validate_genotype(cfg.space, seg.best.genotype);
  fs::remove_all(dir);
}

TEST_CASE("constraint settings parse presets, fractions and absolute budgets") {
  const SearchSpaceConfig space = mini_config().space;
  CHECK(parse_constraint_setting("small", space) == 0.5);
  CHECK(parse_constraint_setting("medium", space) == 0.8);
  CHECK(parse_constraint_setting("large", space) == 1.0);
  CHECK(parse_constraint_setting("0.75", space) == 0.75);
  const std::uint64_t max_flops = count_resources(space, max_genotype(space)).flops;
  // an absolute MAC budget resolves back to (roughly) itself
  PipelineConfig cfg = mini_config();
  cfg.search_params.constraint_fraction =
      parse_constraint_setting(std::to_string(max_flops / 2), space);
  const double resolved = static_cast<double>(resolve_constraint(cfg));
  CHECK(std::abs(resolved - static_cast<double>(max_flops / 2)) <= 1.0);
  CHECK_THROWS_AS(parse_constraint_setting("tiny", space), ConfigError);
  CHECK_THROWS_AS(parse_constraint_setting("-1", space), ConfigError);
  CHECK_THROWS_AS(parse_constraint_setting("0.5x", space), ConfigError);
}

TEST_CASE("report aggregates a run directory into the committed golden summary") {
  // handcrafted fixture so the golden bytes do not depend on training numerics
  const std::string dir = "golden_run";
  fs::remove_all(dir);
  write_text_file(dir + "/provenance.json",
                  "{\n  \"config_hash\": \"00000000deadbeef\",\n  \"seed\": 5,\n"
                  "  \"space_hash\": \"00000000cafef00d\",\n  \"stage\": \"pretrain\"\n}\n");
  write_text_file(dir + "/result.json",
                  "{\n  \"pretrain\": {\n    \"checkpoint\": "
                  "\"golden_run/checkpoints/supernet_pretrained\",\n    \"epochs\": 1,\n"
                  "    \"final_loss\": 1.25\n  }\n}\n");
  write_text_file(dir + "/logs/pretrain_epochs.csv", "epoch,mean_loss,lr\n0,1.25,0.05\n");
  const std::string summary = run_report(dir);
  const std::string golden = read_text_file(std::string(TEST_DATA_DIR) + "/golden_run_summary.json");
  CHECK(read_text_file(summary) == golden);
  // rerunning changes nothing
  run_report(dir);
  CHECK(read_text_file(summary) == golden);
  CHECK_THROWS_AS(run_report("no_such_run_dir"), UsageError);
  fs::remove_all(dir);
}

TEST_CASE("reruns of a stage produce byte-identical artifacts") {
  const PipelineConfig cfg = mini_config();
  const std::string a = tmp_dir("det_a");
  const std::string b = tmp_dir("det_b");
  run_pretrain(cfg, a);
  run_pretrain(cfg, b);
  for (const char* f :
       {"logs/pretrain_epochs.csv", "provenance.json", "config.json", "result.json"})
    CHECK(read_text_file(a + "/" + f) == read_text_file(b + "/" + f));
  CHECK(read_text_file(a + "/checkpoints/supernet_pretrained/manifest.json") ==
        read_text_file(b + "/checkpoints/supernet_pretrained/manifest.json"));
  CHECK(checkpoint_blob_hash(a + "/checkpoints/supernet_pretrained") ==
        checkpoint_blob_hash(b + "/checkpoints/supernet_pretrained"));
  // a different seed changes the weights
  PipelineConfig other = cfg;
  other.seed = cfg.seed + 1;
  const std::string c = tmp_dir("det_c");
  run_pretrain(other, c);
  CHECK(checkpoint_blob_hash(a + "/checkpoints/supernet_pretrained") !=
        checkpoint_blob_hash(c + "/checkpoints/supernet_pretrained"));
  fs::remove_all(a);
  fs::remove_all(b);
  fs::remove_all(c);
}
