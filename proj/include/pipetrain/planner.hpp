#pragma once

#include <string>
#include <vector>

#include "pipetrain/partition.hpp"

namespace pipetrain {

/// Per-layer delay and storage plan for a stage partition.
struct DelayAssignment {
  std::vector<int> gradient_delay;   // 2*S(l), always even
  std::vector<int> weight_stash;     // S(l)
  std::vector<int> activation_stash; // S(l)
  std::vector<int> staleness;        // 2*S(l)+1 for delayed layers, 0 otherwise

  int num_layers() const { return static_cast<int>(gradient_delay.size()); }
  bool operator==(const DelayAssignment&) const = default;
};

enum class WeightStrategy : int { ExactStash, Latest, FixedEma, PipelineAwareEma };

/// Strategy plus its parameter (only FixedEma carries one).
struct StrategySpec {
  WeightStrategy kind = WeightStrategy::ExactStash;
  double beta = 0.9;

  std::string to_string() const;
  static StrategySpec parse(const std::string& text);  // stash|latest|ema-fixed:<beta>|ema-pipeline
};

struct StorageCost {
  int stashed_weight_copies = 0;     // copies beyond the live weights
  int stashed_activation_slots = 0;  // simultaneous forward caches
  int ema_accumulators = 0;          // one per delayed layer for EMA strategies
};

/// Closed-form plan: gradient delay 2*S(l), stash depths S(l),
/// staleness 2*S(l)+1 for layers with S(l) > 0.
DelayAssignment derive_delays(int num_layers, const StagePartition& p);

/// Storage accounting for a plan under a weight-handling strategy. Exact
/// stashing pays sum_l S(l) weight copies (O(L*n)); both EMA strategies
/// replace those with one accumulator per delayed layer (O(L)); `latest`
/// stores nothing beyond the live weights. Activation stashing is common to
/// every pipelined execution: S(l)+1 slots per layer.
StorageCost storage_cost(const DelayAssignment& a, const StrategySpec& strategy);

}  // namespace pipetrain
