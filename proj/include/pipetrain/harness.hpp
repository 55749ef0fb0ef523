#pragma once

#include <string>
#include <vector>

#include "pipetrain/config.hpp"
#include "pipetrain/dataset.hpp"
#include "pipetrain/pipeline.hpp"

namespace pipetrain {

Dataset build_dataset(const ExperimentConfig& cfg);

/// Minibatch stream for the whole run: per-epoch deterministic shuffles of the
/// training set, chopped into full batches (the ragged tail of each epoch is
/// dropped so every microbatch has identical shape).
std::vector<Batch> build_batches(const Dataset& d, const ExperimentConfig& cfg);

int steps_per_epoch(const Dataset& d, const ExperimentConfig& cfg);

/// One full training run per the config; sequential when the partition has a
/// single stage and the strategy is irrelevant to it.
RunResult run_experiment(const ExperimentConfig& cfg);

struct StrategyReport {
  std::string strategy;
  double final_test_acc = -1.0;
  int epochs_to_threshold = -1;
  long peak_weight_stash_bytes = 0;
  long peak_act_stash_bytes = 0;
  long predicted_weight_stash_bytes = 0;
  int ema_accumulators = 0;
  std::string csv_path;
};

struct ComparisonReport {
  std::vector<StrategyReport> strategies;
  std::string to_text() const;
  std::string to_json() const;
};

/// Runs every strategy against the identical seed and data order; writes one
/// CSV per strategy plus report.txt/report.json when out_dir is set.
/// "sequential" is accepted alongside the weight strategies. Divergence
/// aborts the comparison with the failing strategy named.
ComparisonReport run_comparison(const ExperimentConfig& base, const std::vector<std::string>& strategies);

}  // namespace pipetrain
