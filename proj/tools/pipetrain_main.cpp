#include <cstdio>
#include <iostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "pipetrain/config.hpp"
#include "pipetrain/graph.hpp"
#include "pipetrain/harness.hpp"
#include "pipetrain/nn.hpp"
#include "pipetrain/pipeline.hpp"
#include "pipetrain/retimer.hpp"
#include "pipetrain/weights.hpp"

using namespace pipetrain;

namespace {

struct CommonFlags {
  std::string config_path;
  int layers = -1;
  std::string partition;
  std::string weights;
  int epochs = -1;
  int batch = -1;
  double lr = -1.0;
  double momentum = -1.0;
  double wd = -1.0;
  std::string schedule;
  long warmup = -2;
  long long seed = -1;
  std::string out;
};

void add_common(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON config file; flags override its values");
  cmd->add_option("--layers", f.layers, "number of dense layers (hidden widths default to 64)");
  cmd->add_option("--partition", f.partition, "stage sizes, e.g. 2,2 (or per-layer / single)");
  cmd->add_option("--weights", f.weights, "stash|latest|ema-fixed:<beta>|ema-pipeline");
  cmd->add_option("--epochs", f.epochs);
  cmd->add_option("--batch", f.batch);
  cmd->add_option("--lr", f.lr);
  cmd->add_option("--momentum", f.momentum);
  cmd->add_option("--wd", f.wd, "weight decay");
  cmd->add_option("--schedule", f.schedule, "constant|cosine");
  cmd->add_option("--warmup", f.warmup, "iterations before EMA reconstruction activates");
  cmd->add_option("--seed", f.seed);
  cmd->add_option("--out", f.out, "output directory for CSV/report files");
}

ExperimentConfig make_config(const CommonFlags& f) {
  ExperimentConfig cfg;
  if (!f.config_path.empty()) cfg = load_config(f.config_path);
  if (f.layers > 0) cfg.hidden.assign(static_cast<std::size_t>(f.layers - 1), 64);
  if (!f.partition.empty()) cfg.stage_sizes = parse_stage_sizes(f.partition, cfg.num_layers());
  if (!f.weights.empty()) cfg.strategy = StrategySpec::parse(f.weights);
  if (f.epochs > 0) cfg.epochs = f.epochs;
  if (f.batch > 0) cfg.batch = f.batch;
  if (f.lr > 0) cfg.sgd.lr = f.lr;
  if (f.momentum >= 0) cfg.sgd.momentum = f.momentum;
  if (f.wd >= 0) cfg.sgd.weight_decay = f.wd;
  if (!f.schedule.empty()) cfg.sgd.schedule = f.schedule == "cosine" ? LrSchedule::Cosine : LrSchedule::Constant;
  if (f.warmup >= -1) cfg.warmup_iters = f.warmup;
  if (f.seed >= 0) cfg.seed = static_cast<std::uint64_t>(f.seed);
  if (!f.out.empty()) cfg.out_dir = f.out;
  return cfg;
}

StagePartition flag_partition(const CommonFlags& f, int layers) {
  if (f.partition.empty()) return StagePartition::per_layer(layers);
  return StagePartition::from_sizes(layers, parse_stage_sizes(f.partition, layers));
}

int cmd_plan(const CommonFlags& f) {
  int layers = f.layers > 0 ? f.layers : 4;
  StagePartition part = flag_partition(f, layers);
  DelayAssignment a = derive_delays(layers, part);

  std::printf("layers: %d   stages: %d (%s)\n\n", layers, part.num_stages(), part.to_string().c_str());
  std::printf("layer  stage  S(l)  grad_delay  staleness  weight_stash  act_stash\n");
  for (int l = 0; l < layers; ++l)
    std::printf("%5d  %5d  %4d  %10d  %9d  %12d  %9d\n", l, part.stage_of(l), part.stages_after(l),
                a.gradient_delay[static_cast<std::size_t>(l)], a.staleness[static_cast<std::size_t>(l)],
                a.weight_stash[static_cast<std::size_t>(l)], a.activation_stash[static_cast<std::size_t>(l)]);

  std::printf("\nstorage per strategy:\n");
  std::printf("%-18s  %13s  %9s  %12s\n", "strategy", "weight_copies", "act_slots", "accumulators");
  for (const std::string& s : {"stash", "latest", "ema-fixed:0.9", "ema-pipeline"}) {
    StorageCost c = storage_cost(a, StrategySpec::parse(s));
    std::printf("%-18s  %13d  %9d  %12d\n", s.c_str(), c.stashed_weight_copies, c.stashed_activation_slots,
                c.ema_accumulators);
  }

  nlohmann::json j;
  j["layers"] = layers;
  j["partition"] = part.to_string();
  j["gradient_delay"] = a.gradient_delay;
  j["staleness"] = a.staleness;
  j["weight_stash"] = a.weight_stash;
  j["activation_stash"] = a.activation_stash;
  std::printf("\n%s\n", j.dump(2).c_str());
  return 0;
}

int cmd_retime(const CommonFlags& f, bool explain, const std::string& save_path) {
  int layers = f.layers > 0 ? f.layers : 4;
  StagePartition part = flag_partition(f, layers);

  ComputationGraph g = build_training_graph(layers);
  RetimeTrace trace;
  ComputationGraph inserted = insert_initial_delays(g, part, &trace);
  auto [compacted, extracted] = compact(inserted, part, &trace);

  if (explain) trace.print(std::cout, compacted);

  std::printf("\nper-layer delays extracted from the compacted graph:\n");
  std::printf("layer  grad_delay  staleness  weight_stash  act_stash\n");
  for (int l = 0; l < layers; ++l)
    std::printf("%5d  %10d  %9d  %12d  %9d\n", l, extracted.gradient_delay[static_cast<std::size_t>(l)],
                extracted.staleness[static_cast<std::size_t>(l)],
                extracted.weight_stash[static_cast<std::size_t>(l)],
                extracted.activation_stash[static_cast<std::size_t>(l)]);
  if (extracted == derive_delays(layers, part))
    std::printf("matches the closed form 2*S(l).\n");

  if (!save_path.empty()) {
    save_graph(compacted, save_path);
    std::printf("compacted graph written to %s\n", save_path.c_str());
  }
  return 0;
}

int cmd_train(const CommonFlags& f) {
  ExperimentConfig cfg = make_config(f);
  if (cfg.stage_sizes.empty() && !f.partition.empty())
    cfg.stage_sizes = parse_stage_sizes(f.partition, cfg.num_layers());
  RunResult res = run_experiment(cfg);
  std::printf("strategy=%s  final_test_acc=%.4f  ticks=%ld  peak_stash_weight_bytes=%ld\n",
              cfg.strategy.to_string().c_str(), res.metrics.summary.final_test_acc,
              res.metrics.summary.total_ticks, res.metrics.summary.peak_weight_stash_bytes);
  if (cfg.out_dir.empty()) {
    std::ostringstream csv;
    res.metrics.write_csv(csv);
    std::fputs(csv.str().c_str(), stdout);
  }
  return 0;
}

int cmd_compare(const CommonFlags& f, std::string strategies_csv) {
  ExperimentConfig cfg = make_config(f);
  std::vector<std::string> strategies;
  std::stringstream ss(strategies_csv);
  std::string tok;
  while (std::getline(ss, tok, ';'))
    if (!tok.empty()) strategies.push_back(tok);
  if (strategies.empty())
    strategies = {"sequential", "stash", "latest", "ema-fixed:0.9", "ema-pipeline"};
  ComparisonReport report = run_comparison(cfg, strategies);
  std::fputs(report.to_text().c_str(), stdout);
  return 0;
}

int cmd_verify(const CommonFlags& f) {
  (void)f;
  int failures = 0;
  auto check = [&failures](const char* name, bool ok) {
    std::printf("%s  %s\n", ok ? "PASS" : "FAIL", name);
    if (!ok) ++failures;
  };

  // planner vs retimer, exhaustive over partitions of up to six layers
  {
    bool ok = true;
    for (int layers = 1; layers <= 6 && ok; ++layers) {
      for (unsigned mask = 0; mask < (1u << (layers - 1)) && ok; ++mask) {
        std::vector<int> boundaries{0};
        for (int b = 1; b < layers; ++b)
          if (mask & (1u << (b - 1))) boundaries.push_back(b);
        StagePartition part(layers, boundaries);
        ComputationGraph g = build_training_graph(layers);
        auto [compacted, extracted] = compact(insert_initial_delays(g, part), part);
        ok = extracted == derive_delays(layers, part);
      }
    }
    check("retimer compaction matches closed-form delays (L<=6, all partitions)", ok);
  }

  // analytic averager equals the running mean
  {
    bool ok = true;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    GradientAverager avg;
    double sum = 0.0;
    for (int i = 1; i <= 200 && ok; ++i) {
      Tensor g({1});
      g.data[0] = dist(rng);
      sum += g.data[0];
      avg.update(g);
      ok = std::abs(avg.mean.data[0] - sum / i) <= 1e-10 * std::max(1.0, std::abs(sum / i));
    }
    check("analytic averager tracks the arithmetic mean", ok);
  }

  // single-stage pipeline equals sequential training bit for bit
  {
    ExperimentConfig cfg;
    cfg.dataset.samples = 400;
    cfg.epochs = 2;
    cfg.hidden = {16, 16};
    Dataset data = build_dataset(cfg);
    std::vector<Batch> stream = build_batches(data, cfg);
    std::vector<std::size_t> sizes{data.feature_dim(), 16, 16, static_cast<std::size_t>(data.num_classes)};
    RunOptions opt;
    opt.sgd = cfg.sgd;
    opt.steps_per_epoch = steps_per_epoch(data, cfg);
    RunResult seq = run_sequential(make_mlp(sizes, cfg.seed), stream, opt, {});
    PipelineSchedule sched = PipelineSchedule::make(StagePartition::single_stage(3));
    RunResult pipe = run_pipeline(make_mlp(sizes, cfg.seed), sched, stream,
                                  StrategySpec{WeightStrategy::ExactStash, 0.9}, opt, {});
    check("single-stage pipeline == sequential (bit-exact)",
          model_param_bytes(seq.model) == model_param_bytes(pipe.model));
  }

  std::printf("%s\n", failures == 0 ? "verify: all checks passed" : "verify: FAILURES");
  return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pipelined backpropagation toolkit: delay planning, graph retiming and desk-scale training"};
  app.require_subcommand(1);

  CommonFlags f;
  bool explain = false;
  std::string save_graph_path;
  std::string strategies_csv;

  CLI::App* plan = app.add_subcommand("plan", "print the delay assignment and storage costs for a partition");
  add_common(plan, f);

  CLI::App* retime = app.add_subcommand("retime", "derive the pipeline by delay insertion and compaction");
  add_common(retime, f);
  retime->add_flag("--explain", explain, "print the full retiming trace");
  retime->add_option("--save", save_graph_path, "write the compacted graph as JSON");

  CLI::App* train = app.add_subcommand("train", "run one training configuration");
  add_common(train, f);

  CLI::App* compare = app.add_subcommand("compare", "run the weight-handling strategy matrix");
  add_common(compare, f);
  compare->add_option("--strategies", strategies_csv, "semicolon-separated list (default: all)");

  CLI::App* verify = app.add_subcommand("verify", "run the built-in oracle and invariant checks");
  add_common(verify, f);

  CLI11_PARSE(app, argc, argv);

  try {
    if (plan->parsed()) return cmd_plan(f);
    if (retime->parsed()) return cmd_retime(f, explain, save_graph_path);
    if (train->parsed()) return cmd_train(f);
    if (compare->parsed()) return cmd_compare(f, strategies_csv);
    if (verify->parsed()) return cmd_verify(f);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
