#pragma once

#include <deque>
#include <optional>
#include <vector>

#include "pipetrain/nn.hpp"
#include "pipetrain/planner.hpp"

namespace pipetrain {

/// Analytic decay for the running mean written as a moving average:
/// beta(n) = n / (n + 1).
double averager_beta(long n);

/// Online gradient average. Analytic mode uses beta(n) and therefore equals
/// the arithmetic mean of everything observed; fixed mode is a conventional
/// EMA with constant decay, seeded at zero.
struct GradientAverager {
  enum class Mode : int { Analytic, Fixed };

  Mode mode = Mode::Analytic;
  double fixed_beta = 0.9;
  long count = 0;
  Tensor mean;  // allocated on first update

  void update(const Tensor& g);
  bool warm() const { return count >= 1; }
};

/// Delay-matched historical weight estimate: W_hat = W + alpha * k * mean,
/// with k the (odd) staleness of the consuming layer. Requires a warmed
/// averager.
Tensor reconstruct(const Tensor& current, const GradientAverager& averager, double alpha, int staleness);

/// Ring of tagged parameter snapshots, capacity stash_depth + 1.
struct SnapshotRing {
  struct Entry {
    long tick;
    Tensor weight;
    Tensor bias;
  };
  std::size_t capacity = 1;
  std::deque<Entry> entries;

  void push(long tick, const Tensor& w, const Tensor& b);
  const Entry& at_tick(long tick) const;  // throws on a missing snapshot
  std::size_t extra_copies() const { return entries.empty() ? 0 : entries.size() - 1; }
};

/// Per-model weight versioning used by the pipeline executor. Owns one
/// snapshot ring (exact stashing) or one averager pair (EMA modes) per layer.
class WeightProvider {
 public:
  WeightProvider(StrategySpec spec, const DelayAssignment& assignment, long warmup_ticks);

  StrategySpec spec() const { return spec_; }

  /// Record the live parameters of `layer` at the start of `tick`
  /// (exact stashing only; other strategies ignore it).
  void snapshot(int layer, long tick, const Layer& live);

  /// Feed one applied update back to the averagers; `alpha` is the learning
  /// rate that produced it, so the accumulated quantity is the effective
  /// gradient even under momentum or weight decay.
  void on_update(int layer, const AppliedUpdate& update, double alpha);

  /// Weight/bias pair the delayed backward of `layer` must run against.
  /// Exact stashing returns the snapshot of `tick_needed`; latest returns the
  /// live parameters; the EMA modes reconstruct, falling back to the live
  /// parameters until warmed up (warmup window and a full staleness window of
  /// observed updates).
  std::pair<Tensor, Tensor> view(int layer, long now, long tick_needed, const Layer& live, double alpha);

  int ema_accumulators() const;
  std::size_t current_extra_copies(int layer) const;
  std::size_t peak_extra_copies(int layer) const;
  std::size_t peak_extra_copies_total() const;

 private:
  StrategySpec spec_;
  DelayAssignment assignment_;
  long warmup_ticks_ = 0;
  std::vector<SnapshotRing> rings_;
  std::vector<GradientAverager> avg_w_, avg_b_;
  std::vector<std::size_t> peak_copies_;
  std::vector<long> updates_seen_;
};

/// Replays a logged update sequence from the initial parameters; with the
/// toolkit's fixed sequential summation order this reproduces every
/// intermediate parameter state bit-for-bit. `upto` counts applied updates.
std::pair<Tensor, Tensor> exact_history_replay(const Tensor& w0, const Tensor& b0,
                                               const std::vector<AppliedUpdate>& log, std::size_t upto);

}  // namespace pipetrain
