#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pipetrain/nn.hpp"
#include "pipetrain/partition.hpp"
#include "pipetrain/planner.hpp"

namespace pipetrain {

struct DatasetSpec {
  std::string kind = "spiral";  // spiral | blobs | idx
  int classes = 3;
  int samples = 3000;
  double noise = 0.2;
  std::string images_path, labels_path;  // idx only
};

/// Complete description of one training run; a comparison is this plus a
/// strategy list. The seed fixes every random choice (init, shuffles, noise).
struct ExperimentConfig {
  DatasetSpec dataset;
  std::vector<std::size_t> hidden = {64, 64, 64};
  std::vector<int> stage_sizes;  // empty = single stage
  StrategySpec strategy;
  SgdConfig sgd;
  int epochs = 20;
  int batch = 32;
  long warmup_iters = -1;  // -1: two epochs
  std::uint64_t seed = 1;
  std::string out_dir;

  StagePartition partition(int num_layers) const;
  int num_layers() const { return static_cast<int>(hidden.size()) + 1; }
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);

/// Loads a JSON config file; verifies referenced dataset files exist.
ExperimentConfig load_config(const std::string& path);

/// "2,2" -> stage sizes; also accepts "per-layer" and "single".
std::vector<int> parse_stage_sizes(const std::string& text, int num_layers);

}  // namespace pipetrain
