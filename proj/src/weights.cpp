#include "pipetrain/weights.hpp"

#include <stdexcept>

namespace pipetrain {

double averager_beta(long n) {
  if (n < 0) throw std::invalid_argument("averager_beta: negative count");
  return static_cast<double>(n) / static_cast<double>(n + 1);
}

void GradientAverager::update(const Tensor& g) {
  if (mean.data.empty()) mean = Tensor::zeros_like(g);
  if (!mean.same_shape(g)) throw std::invalid_argument("GradientAverager: shape mismatch");
  double beta = mode == Mode::Analytic ? averager_beta(count) : fixed_beta;
  for (std::size_t i = 0; i < mean.data.size(); ++i)
    mean.data[i] = beta * mean.data[i] + (1.0 - beta) * g.data[i];
  ++count;
}

Tensor reconstruct(const Tensor& current, const GradientAverager& averager, double alpha, int staleness) {
  if (staleness < 1 || staleness % 2 == 0)
    throw std::invalid_argument("reconstruct: staleness must be odd and >= 1");
  if (!averager.warm()) throw std::runtime_error("reconstruct: averager not warmed up");
  if (!current.same_shape(averager.mean)) throw std::invalid_argument("reconstruct: shape mismatch");
  Tensor out = current;
  out.add_scaled(averager.mean, alpha * static_cast<double>(staleness));
  return out;
}

void SnapshotRing::push(long tick, const Tensor& w, const Tensor& b) {
  if (!entries.empty() && entries.back().tick >= tick)
    throw std::logic_error("SnapshotRing: ticks must be strictly increasing");
  entries.push_back(Entry{tick, w, b});
  while (entries.size() > capacity) entries.pop_front();
}

const SnapshotRing::Entry& SnapshotRing::at_tick(long tick) const {
  for (const Entry& e : entries)
    if (e.tick == tick) return e;
  throw std::runtime_error("SnapshotRing: no snapshot for tick " + std::to_string(tick));
}

WeightProvider::WeightProvider(StrategySpec spec, const DelayAssignment& assignment, long warmup_ticks)
    : spec_(spec), assignment_(assignment), warmup_ticks_(warmup_ticks) {
  const std::size_t n = static_cast<std::size_t>(assignment_.num_layers());
  rings_.resize(n);
  for (std::size_t l = 0; l < n; ++l)
    rings_[l].capacity = static_cast<std::size_t>(assignment_.weight_stash[l]) + 1;
  avg_w_.resize(n);
  avg_b_.resize(n);
  for (std::size_t l = 0; l < n; ++l) {
    GradientAverager::Mode mode = spec_.kind == WeightStrategy::FixedEma ? GradientAverager::Mode::Fixed
                                                                         : GradientAverager::Mode::Analytic;
    avg_w_[l].mode = mode;
    avg_b_[l].mode = mode;
    avg_w_[l].fixed_beta = spec_.beta;
    avg_b_[l].fixed_beta = spec_.beta;
  }
  peak_copies_.assign(n, 0);
  updates_seen_.assign(n, 0);
}

void WeightProvider::snapshot(int layer, long tick, const Layer& live) {
  if (spec_.kind != WeightStrategy::ExactStash) return;
  std::size_t l = static_cast<std::size_t>(layer);
  if (assignment_.weight_stash[l] == 0) return;  // undelayed layers keep nothing
  rings_[l].push(tick, live.weight, live.bias);
  peak_copies_[l] = std::max(peak_copies_[l], rings_[l].extra_copies());
}

void WeightProvider::on_update(int layer, const AppliedUpdate& update, double alpha) {
  std::size_t l = static_cast<std::size_t>(layer);
  ++updates_seen_[l];
  if (spec_.kind != WeightStrategy::FixedEma && spec_.kind != WeightStrategy::PipelineAwareEma) return;
  if (assignment_.weight_stash[l] == 0) return;
  if (alpha == 0.0) return;  // zero-rate step carries no gradient information
  // applied update divided by -alpha = effective gradient
  Tensor gw = update.d_weight, gb = update.d_bias;
  for (double& v : gw.data) v /= -alpha;
  for (double& v : gb.data) v /= -alpha;
  avg_w_[l].update(gw);
  avg_b_[l].update(gb);
}

std::pair<Tensor, Tensor> WeightProvider::view(int layer, long now, long tick_needed, const Layer& live,
                                               double alpha) {
  std::size_t l = static_cast<std::size_t>(layer);
  const int stale = assignment_.staleness[l];
  if (stale == 0 || tick_needed == now) return {live.weight, live.bias};

  switch (spec_.kind) {
    case WeightStrategy::Latest:
      return {live.weight, live.bias};
    case WeightStrategy::ExactStash: {
      const SnapshotRing::Entry& e = rings_[l].at_tick(tick_needed);
      return {e.weight, e.bias};
    }
    case WeightStrategy::FixedEma:
    case WeightStrategy::PipelineAwareEma: {
      bool warmed = now >= warmup_ticks_ && avg_w_[l].warm() && updates_seen_[l] >= stale;
      if (!warmed) return {live.weight, live.bias};
      return {reconstruct(live.weight, avg_w_[l], alpha, stale),
              reconstruct(live.bias, avg_b_[l], alpha, stale)};
    }
  }
  throw std::logic_error("WeightProvider::view: unknown strategy");
}

int WeightProvider::ema_accumulators() const {
  if (spec_.kind != WeightStrategy::FixedEma && spec_.kind != WeightStrategy::PipelineAwareEma) return 0;
  int n = 0;
  for (int l = 0; l < assignment_.num_layers(); ++l)
    if (assignment_.weight_stash[static_cast<std::size_t>(l)] > 0) ++n;
  return n;
}

std::size_t WeightProvider::current_extra_copies(int layer) const {
  return rings_[static_cast<std::size_t>(layer)].extra_copies();
}

std::size_t WeightProvider::peak_extra_copies(int layer) const {
  return peak_copies_[static_cast<std::size_t>(layer)];
}

std::size_t WeightProvider::peak_extra_copies_total() const {
  std::size_t n = 0;
  for (std::size_t v : peak_copies_) n += v;
  return n;
}

std::pair<Tensor, Tensor> exact_history_replay(const Tensor& w0, const Tensor& b0,
                                               const std::vector<AppliedUpdate>& log, std::size_t upto) {
  if (upto > log.size()) throw std::invalid_argument("exact_history_replay: log too short");
  Tensor w = w0, b = b0;
  for (std::size_t i = 0; i < upto; ++i) {
    const AppliedUpdate& u = log[i];
    if (!u.d_weight.same_shape(w) || !u.d_bias.same_shape(b))
      throw std::invalid_argument("exact_history_replay: log entry shape mismatch");
    for (std::size_t j = 0; j < w.data.size(); ++j) w.data[j] += u.d_weight.data[j];
    for (std::size_t j = 0; j < b.data.size(); ++j) b.data[j] += u.d_bias.data[j];
  }
  return {std::move(w), std::move(b)};
}

}  // namespace pipetrain
