#pragma once

#include <deque>
#include <iosfwd>
#include <string>
#include <vector>

#include "pipetrain/nn.hpp"
#include "pipetrain/partition.hpp"
#include "pipetrain/planner.hpp"
#include "pipetrain/weights.hpp"

namespace pipetrain {

struct Batch {
  Tensor x;
  std::vector<int> y;
};

struct EvalData {
  Tensor x;
  std::vector<int> y;
  bool empty() const { return y.empty(); }
};

struct MetricsRow {
  long tick = 0;
  int epoch = 0;
  std::string strategy;
  double loss = 0.0;
  double train_acc = 0.0;
  double test_acc = -1.0;  // last evaluated value, -1 before the first eval
  long stashed_weight_bytes = 0;
  long stashed_act_bytes = 0;
};

struct RunSummary {
  double final_test_acc = -1.0;
  int epochs_to_threshold = -1;
  long peak_weight_stash_bytes = 0;
  long peak_act_stash_bytes = 0;
  long peak_weight_copies = 0;          // beyond the live weights, summed over layers
  std::vector<long> peak_act_slots;     // per layer
  int ema_accumulators = 0;
  long total_ticks = 0;
};

struct RunMetrics {
  std::vector<MetricsRow> rows;
  RunSummary summary;

  void write_csv(std::ostream& os) const;
};

struct RunResult {
  Model model;
  RunMetrics metrics;
};

/// Slot table of the executor: stage s forwards microbatch tick-s while the
/// backward wavefront walks the whole depth for microbatch tick-(stages-1).
struct PipelineSchedule {
  StagePartition partition;
  DelayAssignment assignment;

  static PipelineSchedule make(const StagePartition& p);

  int num_stages() const { return partition.num_stages(); }
  long fwd_microbatch(int stage, long tick) const { return tick - stage; }
  long bwd_microbatch(long tick) const { return tick - (num_stages() - 1); }
};

/// Ring of pending forward caches for one layer; capacity S(l)+1. A cache is
/// taken exactly once, in production order.
struct ActivationStash {
  struct Entry {
    long microbatch;
    ForwardCache cache;
  };
  std::size_t capacity = 1;
  std::deque<Entry> entries;
  std::size_t peak = 0;

  void push(long microbatch, ForwardCache cache);
  ForwardCache take(long microbatch);  // throws on under/overflow or order violations
  long bytes() const;
};

struct RunOptions {
  SgdConfig sgd;
  int steps_per_epoch = 0;  // 0: single epoch, no test evals
  long warmup_ticks = 0;    // EMA strategies fall back to latest before this tick
  double acc_threshold = 0.9;
  std::string strategy_label;  // row label override
};

/// Plain minibatch SGD baseline.
RunResult run_sequential(Model m, const std::vector<Batch>& stream, const RunOptions& opt,
                         const EvalData& eval);

/// Serial reference for delayed-gradient training: each step runs a full
/// forward/backward against the current weights, then applies the gradient
/// that has aged exactly gradient_delay(l) steps at each layer. This is the
/// trajectory pipelined execution with exact stashing must reproduce
/// bit-for-bit.
RunResult run_delayed_serial(Model m, const DelayAssignment& a, const std::vector<Batch>& stream,
                             const RunOptions& opt, const EvalData& eval);

/// Tick-driven pipelined execution: per tick all stage forwards (input-most
/// first), one backward wavefront over stashed activations and
/// strategy-provided weight versions (output-most first), then the delayed
/// weight updates. Fill and drain ticks skip the slots with no microbatch.
RunResult run_pipeline(Model m, const PipelineSchedule& schedule, const std::vector<Batch>& stream,
                       const StrategySpec& strategy, const RunOptions& opt, const EvalData& eval);

double evaluate_accuracy(const Model& m, const Tensor& x, const std::vector<int>& y);

}  // namespace pipetrain
