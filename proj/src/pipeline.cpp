#include "pipetrain/pipeline.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace pipetrain {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

int argmax_row(const Tensor& t, std::size_t row) {
  int best = 0;
  for (std::size_t j = 1; j < t.cols(); ++j)
    if (t.at(row, j) > t.at(row, static_cast<std::size_t>(best))) best = static_cast<int>(j);
  return best;
}

long cache_bytes(const ForwardCache& c) {
  return static_cast<long>((c.input.numel() + c.pre.numel()) * sizeof(double));
}

// Shared per-run bookkeeping for the metrics rows.
struct MetricsTracker {
  RunMetrics metrics;
  std::string label;
  int steps_per_epoch = 0;
  double threshold = 0.9;
  long correct_in_epoch = 0, seen_in_epoch = 0;
  double last_test_acc = -1.0;

  int epoch_of(long microbatch) const {
    return steps_per_epoch > 0 ? static_cast<int>(microbatch / steps_per_epoch) : 0;
  }
  bool epoch_end(long microbatch) const {
    return steps_per_epoch > 0 && (microbatch + 1) % steps_per_epoch == 0;
  }

  void on_loss(long tick, long microbatch, double loss, const Tensor& logits, const std::vector<int>& labels,
               long weight_bytes, long act_bytes) {
    if (!std::isfinite(loss)) throw TrainingDiverged("non-finite loss in strategy " + label);
    if (steps_per_epoch > 0 && microbatch % steps_per_epoch == 0) {
      correct_in_epoch = 0;
      seen_in_epoch = 0;
    }
    for (std::size_t b = 0; b < labels.size(); ++b)
      if (argmax_row(logits, b) == labels[b]) ++correct_in_epoch;
    seen_in_epoch += static_cast<long>(labels.size());
    MetricsRow row;
    row.tick = tick;
    row.epoch = epoch_of(microbatch);
    row.strategy = label;
    row.loss = loss;
    row.train_acc = seen_in_epoch ? static_cast<double>(correct_in_epoch) / static_cast<double>(seen_in_epoch) : 0.0;
    row.test_acc = last_test_acc;
    row.stashed_weight_bytes = weight_bytes;
    row.stashed_act_bytes = act_bytes;
    metrics.rows.push_back(std::move(row));
    metrics.summary.peak_weight_stash_bytes = std::max(metrics.summary.peak_weight_stash_bytes, weight_bytes);
    metrics.summary.peak_act_stash_bytes = std::max(metrics.summary.peak_act_stash_bytes, act_bytes);
  }

  void on_eval(const Model& m, const EvalData& eval, long microbatch) {
    if (eval.empty()) return;
    last_test_acc = evaluate_accuracy(m, eval.x, eval.y);
    if (!metrics.rows.empty()) metrics.rows.back().test_acc = last_test_acc;
    metrics.summary.final_test_acc = last_test_acc;
    if (metrics.summary.epochs_to_threshold < 0 && last_test_acc >= threshold)
      metrics.summary.epochs_to_threshold = epoch_of(microbatch);
  }
};

}  // namespace

void RunMetrics::write_csv(std::ostream& os) const {
  os << "tick,epoch,strategy,loss,train_acc,test_acc,stashed_weight_bytes,stashed_act_bytes\n";
  for (const MetricsRow& r : rows)
    os << r.tick << ',' << r.epoch << ',' << r.strategy << ',' << fmt_double(r.loss) << ','
       << fmt_double(r.train_acc) << ',' << fmt_double(r.test_acc) << ',' << r.stashed_weight_bytes << ','
       << r.stashed_act_bytes << '\n';
}

PipelineSchedule PipelineSchedule::make(const StagePartition& p) {
  return PipelineSchedule{p, derive_delays(p.num_layers, p)};
}

void ActivationStash::push(long microbatch, ForwardCache cache) {
  if (!entries.empty() && entries.back().microbatch >= microbatch)
    throw std::logic_error("ActivationStash: out-of-order push");
  entries.push_back(Entry{microbatch, std::move(cache)});
  if (entries.size() > capacity) throw std::logic_error("ActivationStash: overflow");
  peak = std::max(peak, entries.size());
}

ForwardCache ActivationStash::take(long microbatch) {
  if (entries.empty()) throw std::logic_error("ActivationStash: underflow");
  if (entries.front().microbatch != microbatch)
    throw std::logic_error("ActivationStash: expected microbatch " + std::to_string(entries.front().microbatch) +
                           ", asked for " + std::to_string(microbatch));
  ForwardCache c = std::move(entries.front().cache);
  entries.pop_front();
  return c;
}

long ActivationStash::bytes() const {
  long n = 0;
  for (const Entry& e : entries) n += cache_bytes(e.cache);
  return n;
}

double evaluate_accuracy(const Model& m, const Tensor& x, const std::vector<int>& y) {
  Tensor logits = model_forward(m, x, nullptr);
  long correct = 0;
  for (std::size_t b = 0; b < y.size(); ++b)
    if (argmax_row(logits, b) == y[b]) ++correct;
  return y.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(y.size());
}

RunResult run_sequential(Model m, const std::vector<Batch>& stream, const RunOptions& opt,
                         const EvalData& eval) {
  RunOptions o = opt;
  o.sgd.check();
  MetricsTracker tr;
  tr.label = opt.strategy_label.empty() ? "sequential" : opt.strategy_label;
  tr.steps_per_epoch = opt.steps_per_epoch;
  tr.threshold = opt.acc_threshold;

  for (long t = 0; t < static_cast<long>(stream.size()); ++t) {
    const Batch& batch = stream[static_cast<std::size_t>(t)];
    std::vector<ForwardCache> caches;
    Tensor logits = model_forward(m, batch.x, &caches);
    auto [loss, d_logits] = softmax_ce(logits, batch.y);
    tr.on_loss(t, t, loss, logits, batch.y, 0, 0);

    Tensor d = std::move(d_logits);
    std::vector<LayerGrads> grads(static_cast<std::size_t>(m.num_layers()));
    for (int l = m.num_layers() - 1; l >= 0; --l) {
      grads[static_cast<std::size_t>(l)] =
          backward(m.layers[static_cast<std::size_t>(l)], caches[static_cast<std::size_t>(l)], d);
      d = grads[static_cast<std::size_t>(l)].d_input;
    }
    for (int l = 0; l < m.num_layers(); ++l)
      sgd_step(m.layers[static_cast<std::size_t>(l)], grads[static_cast<std::size_t>(l)], o.sgd,
               static_cast<int>(t));
    if (tr.epoch_end(t)) tr.on_eval(m, eval, t);
  }
  tr.metrics.summary.total_ticks = static_cast<long>(stream.size());
  return RunResult{std::move(m), std::move(tr.metrics)};
}

RunResult run_delayed_serial(Model m, const DelayAssignment& a, const std::vector<Batch>& stream,
                             const RunOptions& opt, const EvalData& eval) {
  if (a.num_layers() != m.num_layers()) throw std::invalid_argument("run_delayed_serial: assignment mismatch");
  RunOptions o = opt;
  o.sgd.check();
  MetricsTracker tr;
  tr.label = opt.strategy_label.empty() ? "serial-delayed" : opt.strategy_label;
  tr.steps_per_epoch = opt.steps_per_epoch;
  tr.threshold = opt.acc_threshold;

  struct Pending {
    long index;
    LayerGrads grads;
  };
  std::vector<std::deque<Pending>> queue(static_cast<std::size_t>(m.num_layers()));
  const long M = static_cast<long>(stream.size());

  long max_delay = 0;
  for (int l = 0; l < a.num_layers(); ++l)
    max_delay = std::max(max_delay, static_cast<long>(a.gradient_delay[static_cast<std::size_t>(l)]));

  for (long t = 0; t < M + max_delay; ++t) {
    if (t < M) {
      const Batch& batch = stream[static_cast<std::size_t>(t)];
      std::vector<ForwardCache> caches;
      Tensor logits = model_forward(m, batch.x, &caches);
      auto [loss, d_logits] = softmax_ce(logits, batch.y);
      tr.on_loss(t, t, loss, logits, batch.y, 0, 0);

      Tensor d = std::move(d_logits);
      for (int l = m.num_layers() - 1; l >= 0; --l) {
        LayerGrads g = backward(m.layers[static_cast<std::size_t>(l)], caches[static_cast<std::size_t>(l)], d);
        d = g.d_input;
        queue[static_cast<std::size_t>(l)].push_back(Pending{t, std::move(g)});
      }
    }
    for (int l = 0; l < m.num_layers(); ++l) {
      auto& q = queue[static_cast<std::size_t>(l)];
      long delay = a.gradient_delay[static_cast<std::size_t>(l)];
      while (!q.empty() && q.front().index + delay <= t) {
        sgd_step(m.layers[static_cast<std::size_t>(l)], q.front().grads, o.sgd,
                 static_cast<int>(q.front().index));
        q.pop_front();
      }
    }
    if (t < M && tr.epoch_end(t)) tr.on_eval(m, eval, t);
  }
  tr.metrics.summary.total_ticks = M + max_delay;
  return RunResult{std::move(m), std::move(tr.metrics)};
}

RunResult run_pipeline(Model m, const PipelineSchedule& schedule, const std::vector<Batch>& stream,
                       const StrategySpec& strategy, const RunOptions& opt, const EvalData& eval) {
  const StagePartition& part = schedule.partition;
  const DelayAssignment& assign = schedule.assignment;
  if (part.num_layers != m.num_layers()) throw std::invalid_argument("run_pipeline: schedule/model mismatch");
  RunOptions o = opt;
  o.sgd.check();

  MetricsTracker tr;
  tr.label = opt.strategy_label.empty() ? strategy.to_string() : opt.strategy_label;
  tr.steps_per_epoch = opt.steps_per_epoch;
  tr.threshold = opt.acc_threshold;

  const int L = m.num_layers();
  const int N = part.num_stages();
  const long M = static_cast<long>(stream.size());

  WeightProvider provider(strategy, assign, opt.warmup_ticks);

  std::vector<ActivationStash> act_stash(static_cast<std::size_t>(L));
  for (int l = 0; l < L; ++l)
    act_stash[static_cast<std::size_t>(l)].capacity =
        static_cast<std::size_t>(assign.activation_stash[static_cast<std::size_t>(l)]) + 1;

  // one-tick boundary registers between stages: (microbatch, activation)
  struct Slot {
    long microbatch = -1;
    Tensor value;
  };
  std::vector<Slot> stage_in(static_cast<std::size_t>(N)), stage_in_next(static_cast<std::size_t>(N));

  struct PendingGrad {
    long index;          // microbatch the gradient belongs to
    long computed_tick;  // tick of the backward wavefront
    LayerGrads grads;
  };
  std::vector<std::deque<PendingGrad>> grad_queue(static_cast<std::size_t>(L));

  auto stage_layers = [&](int s) {
    int lo = part.boundaries[static_cast<std::size_t>(s)];
    int hi = s + 1 < N ? part.boundaries[static_cast<std::size_t>(s + 1)] : L;
    return std::pair<int, int>(lo, hi);
  };

  long last_update_tick = M - 1 + (N - 1);
  for (int l = 0; l < L; ++l)
    last_update_tick = std::max(last_update_tick,
                                M - 1 + (N - 1) + assign.weight_stash[static_cast<std::size_t>(l)]);
  const long total_ticks = last_update_tick + 1;

  Tensor loss_logits;
  for (long tick = 0; tick < total_ticks; ++tick) {
    // weight snapshots reflect the state each forward slot sees this tick
    for (int l = 0; l < L; ++l) provider.snapshot(l, tick, m.layers[static_cast<std::size_t>(l)]);

    // forwards, input-most stage first, reading last tick's boundary registers
    for (int s = 0; s < N; ++s) {
      long mb = schedule.fwd_microbatch(s, tick);
      if (mb < 0 || mb >= M) continue;
      Tensor x;
      if (s == 0) {
        x = stream[static_cast<std::size_t>(mb)].x;
      } else {
        if (stage_in[static_cast<std::size_t>(s)].microbatch != mb)
          throw std::logic_error("run_pipeline: boundary register holds wrong microbatch");
        x = std::move(stage_in[static_cast<std::size_t>(s)].value);
      }
      auto [lo, hi] = stage_layers(s);
      for (int l = lo; l < hi; ++l) {
        ForwardCache cache;
        x = forward(m.layers[static_cast<std::size_t>(l)], x, &cache);
        act_stash[static_cast<std::size_t>(l)].push(mb, std::move(cache));
      }
      if (s + 1 < N)
        stage_in_next[static_cast<std::size_t>(s + 1)] = Slot{mb, std::move(x)};
      else
        loss_logits = std::move(x);
    }

    // backward wavefront: loss of the microbatch that finished its forward
    // this tick, then delta all the way down against stashed state
    long mb_b = schedule.bwd_microbatch(tick);
    if (mb_b >= 0 && mb_b < M) {
      const std::vector<int>& labels = stream[static_cast<std::size_t>(mb_b)].y;
      auto [loss, d_logits] = softmax_ce(loss_logits, labels);

      Tensor d = std::move(d_logits);
      for (int l = L - 1; l >= 0; --l) {
        int s = part.stage_of(l);
        long produced_tick = mb_b + s;  // forward tick of this microbatch at layer l
        ForwardCache cache = act_stash[static_cast<std::size_t>(l)].take(mb_b);
        auto [w, b] = provider.view(l, tick, produced_tick, m.layers[static_cast<std::size_t>(l)],
                                    o.sgd.alpha_at(static_cast<int>(mb_b)));
        Layer view;
        view.weight = std::move(w);
        view.bias = std::move(b);
        view.activation = m.layers[static_cast<std::size_t>(l)].activation;
        LayerGrads g = backward(view, cache, d);
        d = std::move(g.d_input);
        g.d_input = Tensor();  // not needed past this point
        grad_queue[static_cast<std::size_t>(l)].push_back(PendingGrad{mb_b, tick, std::move(g)});
      }

      // stash occupancy after this tick's backward consumed its caches
      long wb = 0;
      for (int l = 0; l < L; ++l)
        wb += static_cast<long>(provider.current_extra_copies(l)) *
              static_cast<long>(m.layers[static_cast<std::size_t>(l)].param_bytes());
      long ab = 0;
      for (int l = 0; l < L; ++l) ab += act_stash[static_cast<std::size_t>(l)].bytes();
      tr.on_loss(tick, mb_b, loss, loss_logits, labels, wb, ab);
    }

    // delayed updates: a gradient rests gradient_delay(l)/2 ticks in the queue
    for (int l = 0; l < L; ++l) {
      auto& q = grad_queue[static_cast<std::size_t>(l)];
      long rest = assign.weight_stash[static_cast<std::size_t>(l)];  // S(l)
      while (!q.empty() && q.front().computed_tick + rest <= tick) {
        double alpha = o.sgd.alpha_at(static_cast<int>(q.front().index));
        AppliedUpdate u = sgd_step(m.layers[static_cast<std::size_t>(l)], q.front().grads, o.sgd,
                                   static_cast<int>(q.front().index));
        provider.on_update(l, u, alpha);
        q.pop_front();
      }
    }

    if (mb_b >= 0 && mb_b < M && tr.epoch_end(mb_b)) tr.on_eval(m, eval, mb_b);
    stage_in = std::move(stage_in_next);
    stage_in_next.assign(static_cast<std::size_t>(N), Slot{});
  }

  for (int l = 0; l < L; ++l)
    if (!grad_queue[static_cast<std::size_t>(l)].empty())
      throw std::logic_error("run_pipeline: pending gradients after drain");

  tr.metrics.summary.total_ticks = total_ticks;
  tr.metrics.summary.peak_weight_copies = static_cast<long>(provider.peak_extra_copies_total());
  tr.metrics.summary.ema_accumulators = provider.ema_accumulators();
  for (int l = 0; l < L; ++l)
    tr.metrics.summary.peak_act_slots.push_back(
        static_cast<long>(act_stash[static_cast<std::size_t>(l)].peak));
  return RunResult{std::move(m), std::move(tr.metrics)};
}

}  // namespace pipetrain
