#include "pipetrain/harness.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include "json.hpp"

namespace pipetrain {

Dataset build_dataset(const ExperimentConfig& cfg) {
  const DatasetSpec& d = cfg.dataset;
  if (d.kind == "spiral") return generate_spiral(d.classes, d.samples, d.noise, cfg.seed);
  if (d.kind == "blobs") return generate_blobs(d.classes, d.samples, d.noise, cfg.seed);
  if (d.kind == "idx") return load_idx(d.images_path, d.labels_path);
  throw std::invalid_argument("unknown dataset kind: " + d.kind);
}

int steps_per_epoch(const Dataset& d, const ExperimentConfig& cfg) {
  return static_cast<int>(d.train_x.rows()) / cfg.batch;
}

std::vector<Batch> build_batches(const Dataset& d, const ExperimentConfig& cfg) {
  const std::size_t n = d.train_x.rows(), dim = d.train_x.cols();
  const int spe = steps_per_epoch(d, cfg);
  if (spe < 1) throw std::invalid_argument("build_batches: batch larger than the training set");

  std::vector<Batch> stream;
  std::vector<std::size_t> order(n);
  for (int e = 0; e < cfg.epochs; ++e) {
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(cfg.seed * 0x9e3779b97f4a7c15ULL + static_cast<std::uint64_t>(e) + 1);
    std::shuffle(order.begin(), order.end(), rng);
    for (int s = 0; s < spe; ++s) {
      Batch b;
      b.x = Tensor({static_cast<std::size_t>(cfg.batch), dim});
      for (int i = 0; i < cfg.batch; ++i) {
        std::size_t src = order[static_cast<std::size_t>(s * cfg.batch + i)];
        for (std::size_t j = 0; j < dim; ++j) b.x.at(static_cast<std::size_t>(i), j) = d.train_x.at(src, j);
        b.y.push_back(d.train_y[src]);
      }
      stream.push_back(std::move(b));
    }
  }
  return stream;
}

namespace {

RunResult run_one(const ExperimentConfig& cfg, const std::string& strategy_name, const Dataset& data,
                  const std::vector<Batch>& stream) {
  const int spe = steps_per_epoch(data, cfg);
  std::vector<std::size_t> sizes;
  sizes.push_back(data.feature_dim());
  for (std::size_t h : cfg.hidden) sizes.push_back(h);
  sizes.push_back(static_cast<std::size_t>(data.num_classes));
  Model model = make_mlp(sizes, cfg.seed);

  RunOptions opt;
  opt.sgd = cfg.sgd;
  if (opt.sgd.schedule == LrSchedule::Cosine && opt.sgd.t_max <= 1)
    opt.sgd.t_max = static_cast<int>(stream.size());
  opt.steps_per_epoch = spe;
  opt.warmup_ticks = cfg.warmup_iters >= 0 ? cfg.warmup_iters : 2L * spe;
  opt.strategy_label = strategy_name;

  EvalData eval;
  if (!data.test_y.empty()) {
    eval.x = data.test_x;
    eval.y = data.test_y;
  }

  if (strategy_name == "sequential") return run_sequential(std::move(model), stream, opt, eval);

  StrategySpec strat = StrategySpec::parse(strategy_name);
  StagePartition part = cfg.partition(model.num_layers());
  PipelineSchedule schedule = PipelineSchedule::make(part);
  return run_pipeline(std::move(model), schedule, stream, strat, opt, eval);
}

}  // namespace

RunResult run_experiment(const ExperimentConfig& cfg) {
  Dataset data = build_dataset(cfg);
  std::vector<Batch> stream = build_batches(data, cfg);
  RunResult res = run_one(cfg, cfg.strategy.to_string(), data, stream);
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    std::ofstream csv(cfg.out_dir + "/" + cfg.strategy.to_string() + ".csv", std::ios::binary);
    res.metrics.write_csv(csv);
  }
  return res;
}

std::string ComparisonReport::to_text() const {
  std::string s = "strategy            final_test_acc  epochs_to_thresh  peak_stash_weight_B  peak_stash_act_B  ema_accumulators\n";
  char line[256];
  for (const StrategyReport& r : strategies) {
    std::snprintf(line, sizeof(line), "%-18s  %14.4f  %16d  %19ld  %16ld  %16d\n", r.strategy.c_str(),
                  r.final_test_acc, r.epochs_to_threshold, r.peak_weight_stash_bytes, r.peak_act_stash_bytes,
                  r.ema_accumulators);
    s += line;
  }
  return s;
}

std::string ComparisonReport::to_json() const {
  nlohmann::json j = nlohmann::json::array();
  for (const StrategyReport& r : strategies)
    j.push_back({{"strategy", r.strategy},
                 {"final_test_acc", r.final_test_acc},
                 {"epochs_to_threshold", r.epochs_to_threshold},
                 {"peak_weight_stash_bytes", r.peak_weight_stash_bytes},
                 {"predicted_weight_stash_bytes", r.predicted_weight_stash_bytes},
                 {"peak_act_stash_bytes", r.peak_act_stash_bytes},
                 {"ema_accumulators", r.ema_accumulators},
                 {"csv", r.csv_path}});
  return j.dump(2);
}

ComparisonReport run_comparison(const ExperimentConfig& base, const std::vector<std::string>& strategies) {
  Dataset data = build_dataset(base);
  std::vector<Batch> stream = build_batches(data, base);

  ComparisonReport report;
  for (const std::string& name : strategies) {
    RunResult res;
    try {
      res = run_one(base, name, data, stream);
    } catch (const TrainingDiverged& e) {
      throw TrainingDiverged(name + ": " + e.what());
    }

    StrategyReport sr;
    sr.strategy = name;
    sr.final_test_acc = res.metrics.summary.final_test_acc;
    sr.epochs_to_threshold = res.metrics.summary.epochs_to_threshold;
    sr.peak_weight_stash_bytes = res.metrics.summary.peak_weight_stash_bytes;
    sr.peak_act_stash_bytes = res.metrics.summary.peak_act_stash_bytes;
    sr.ema_accumulators = res.metrics.summary.ema_accumulators;

    if (name != "sequential") {
      // predicted storage: planner copies x per-layer parameter bytes
      StagePartition part = base.partition(res.model.num_layers());
      DelayAssignment a = derive_delays(res.model.num_layers(), part);
      long bytes = 0;
      for (int l = 0; l < res.model.num_layers(); ++l)
        bytes += static_cast<long>(a.weight_stash[static_cast<std::size_t>(l)]) *
                 static_cast<long>(res.model.layers[static_cast<std::size_t>(l)].param_bytes());
      StrategySpec strat = StrategySpec::parse(name);
      sr.predicted_weight_stash_bytes = strat.kind == WeightStrategy::ExactStash ? bytes : 0;
    }

    if (!base.out_dir.empty()) {
      std::filesystem::create_directories(base.out_dir);
      sr.csv_path = base.out_dir + "/" + name + ".csv";
      std::ofstream csv(sr.csv_path, std::ios::binary);
      res.metrics.write_csv(csv);
    }
    report.strategies.push_back(std::move(sr));
  }

  if (!base.out_dir.empty()) {
    std::ofstream txt(base.out_dir + "/report.txt", std::ios::binary);
    txt << report.to_text();
    std::ofstream js(base.out_dir + "/report.json", std::ios::binary);
    js << report.to_json() << "\n";
  }
  return report;
}

}  // namespace pipetrain
