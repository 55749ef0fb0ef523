#include "pipetrain/harness.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"

using namespace pipetrain;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.dataset.kind = "blobs";
  cfg.dataset.classes = 2;
  cfg.dataset.samples = 300;
  cfg.dataset.noise = 0.2;
  cfg.hidden = {8, 8, 8};
  cfg.stage_sizes = {1, 1, 1, 1};
  cfg.epochs = 3;
  cfg.batch = 16;
  cfg.sgd.lr = 0.1;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("config json round-trip and overrides") {
  ExperimentConfig cfg = tiny_config();
  cfg.strategy = StrategySpec::parse("ema-fixed:0.8");
  std::string text = config_to_json(cfg);
  ExperimentConfig back = config_from_json(text);
  CHECK(back.dataset.kind == "blobs");
  CHECK(back.hidden == std::vector<std::size_t>{8, 8, 8});
  CHECK(back.stage_sizes == std::vector<int>{1, 1, 1, 1});
  CHECK(back.strategy.to_string() == "ema-fixed:0.8");
  CHECK(back.epochs == 3);
  CHECK(back.seed == 5);

  CHECK(parse_stage_sizes("per-layer", 4) == std::vector<int>{1, 1, 1, 1});
  CHECK(parse_stage_sizes("single", 4) == std::vector<int>{4});
  CHECK(parse_stage_sizes("2,2", 4) == std::vector<int>{2, 2});
}

TEST_CASE("missing dataset files are rejected at config load") {
  ExperimentConfig cfg = tiny_config();
  cfg.dataset.kind = "idx";
  cfg.dataset.images_path = "does_not_exist.idx";
  cfg.dataset.labels_path = "also_missing.idx";
  std::ofstream out("cfg_missing_test.json");
  out << config_to_json(cfg);
  out.close();
  CHECK_THROWS(load_config("cfg_missing_test.json"));
  std::remove("cfg_missing_test.json");
}

TEST_CASE("batch stream is deterministic in the seed") {
  ExperimentConfig cfg = tiny_config();
  Dataset d = build_dataset(cfg);
  auto a = build_batches(d, cfg);
  auto b = build_batches(d, cfg);
  REQUIRE(a.size() == b.size());
  CHECK(a.size() == static_cast<std::size_t>(steps_per_epoch(d, cfg) * cfg.epochs));
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x.data == b[i].x.data);
    CHECK(a[i].y == b[i].y);
  }
}

TEST_CASE("comparison runs share data order and write deterministic csv") {
  ExperimentConfig cfg = tiny_config();
  cfg.out_dir = "harness_test_out_a";
  std::vector<std::string> strategies{"sequential", "stash", "ema-pipeline"};
  ComparisonReport r1 = run_comparison(cfg, strategies);
  REQUIRE(r1.strategies.size() == 3);

  cfg.out_dir = "harness_test_out_b";
  ComparisonReport r2 = run_comparison(cfg, strategies);

  for (const std::string& s : strategies) {
    std::string a = slurp("harness_test_out_a/" + s + ".csv");
    std::string b = slurp("harness_test_out_b/" + s + ".csv");
    CHECK(!a.empty());
    CHECK(a == b);
  }
  CHECK(slurp("harness_test_out_a/report.txt") == slurp("harness_test_out_b/report.txt"));

  // measured stash bytes equal the planner prediction for exact stashing
  for (const StrategyReport& sr : r1.strategies)
    if (sr.strategy == "stash") CHECK(sr.peak_weight_stash_bytes == sr.predicted_weight_stash_bytes);

  std::filesystem::remove_all("harness_test_out_a");
  std::filesystem::remove_all("harness_test_out_b");
}

TEST_CASE("one-strategy comparison yields a single row report") {
  ExperimentConfig cfg = tiny_config();
  ComparisonReport r = run_comparison(cfg, {"sequential"});
  REQUIRE(r.strategies.size() == 1);
  CHECK(r.strategies[0].strategy == "sequential");
  CHECK(r.strategies[0].final_test_acc > 0.5);
  std::string text = r.to_text();
  CHECK(text.find("sequential") != std::string::npos);
}

TEST_CASE("noise-free two-class spiral reaches high accuracy sequentially") {
  ExperimentConfig cfg;
  cfg.dataset.kind = "spiral";
  cfg.dataset.classes = 2;
  cfg.dataset.samples = 1000;
  cfg.dataset.noise = 0.0;
  cfg.hidden = {32, 32};
  cfg.stage_sizes = {};
  cfg.epochs = 40;
  cfg.batch = 25;
  cfg.sgd.lr = 0.25;
  cfg.seed = 3;
  cfg.strategy = StrategySpec::parse("stash");

  Dataset d = build_dataset(cfg);
  auto stream = build_batches(d, cfg);
  RunOptions opt;
  opt.sgd = cfg.sgd;
  opt.steps_per_epoch = steps_per_epoch(d, cfg);
  EvalData eval{d.test_x, d.test_y};
  std::vector<std::size_t> sizes{2, 32, 32, 2};
  RunResult res = run_sequential(make_mlp(sizes, cfg.seed), stream, opt, eval);
  CHECK(res.metrics.summary.final_test_acc >= 0.98);
}
