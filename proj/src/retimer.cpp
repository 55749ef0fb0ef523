#include "pipetrain/retimer.hpp"

#include <algorithm>
#include <ostream>
#include <set>
#include <stdexcept>

namespace pipetrain {

const char* retiming_step_name(RetimingStep::Kind k) {
  switch (k) {
    case RetimingStep::Kind::InsertCutsetDelay: return "insert-cutset-delay";
    case RetimingStep::Kind::InsertFeedbackDelay: return "insert-feedback-delay";
    case RetimingStep::Kind::RetimeBackwardCutset: return "retime-backward-cutset";
    case RetimingStep::Kind::RetimeForwardCutset: return "retime-forward-cutset";
    case RetimingStep::Kind::LeaveBoundaryDelay: return "leave-boundary-delay";
  }
  return "?";
}

namespace {

std::string edge_desc(const ComputationGraph& g, int e) {
  const Edge& ed = g.edges[static_cast<std::size_t>(e)];
  auto node_desc = [&](int id) {
    const Node& n = g.node(id);
    std::string s = node_kind_name(n.kind);
    if (n.layer >= 0) s += std::to_string(n.layer);
    return s;
  };
  return node_desc(ed.src) + " -> " + node_desc(ed.dst);
}

void record(RetimeTrace* trace, RetimingStep step) {
  if (trace) trace->steps.push_back(std::move(step));
}

void check_layers(const ComputationGraph& g, const std::vector<int>& layers) {
  if (layers.empty()) throw std::invalid_argument("retime: empty layer set");
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] < 0 || layers[i] >= g.num_layers) throw std::out_of_range("retime: layer out of range");
    if (i > 0 && layers[i] != layers[i - 1] + 1)
      throw std::invalid_argument("retime: layer set must be contiguous");
  }
}

// Retimes the node set by `amount`: inward edges gain, outward edges lose.
// The graph is only modified if every decremented edge stays nonnegative.
ComputationGraph retime_region(const ComputationGraph& g, const std::set<int>& region, int amount,
                               RetimingStep::Kind kind, const std::string& where, RetimeTrace* trace) {
  if (amount < 0) throw std::invalid_argument("retime: negative amount");
  std::vector<int> plus, minus;
  for (int e = 0; e < g.num_edges(); ++e) {
    const Edge& ed = g.edges[static_cast<std::size_t>(e)];
    bool s = region.count(ed.src) > 0, d = region.count(ed.dst) > 0;
    if (s == d) continue;
    (d ? plus : minus).push_back(e);
  }
  for (int e : minus)
    if (g.edges[static_cast<std::size_t>(e)].delay < amount)
      throw RetimingError("illegal retiming: edge " + edge_desc(g, e) + " carries " +
                          std::to_string(g.edges[static_cast<std::size_t>(e)].delay) + "D, needs " +
                          std::to_string(amount) + "D");
  ComputationGraph out = g;
  for (int e : plus) out.edges[static_cast<std::size_t>(e)].delay += amount;
  for (int e : minus) out.edges[static_cast<std::size_t>(e)].delay -= amount;
  record(trace, RetimingStep{kind, where, minus, plus, amount});
  return out;
}

}  // namespace

void RetimeTrace::print(std::ostream& os, const ComputationGraph& g) const {
  for (const RetimingStep& s : steps) {
    os << retiming_step_name(s.kind) << "  " << s.where << "  (" << s.delta << "D)\n";
    for (int e : s.edges_minus)
      os << "    -" << s.delta << "D  " << edge_desc(g, e) << "\n";
    for (int e : s.edges_plus)
      os << "    +" << s.delta << "D  " << edge_desc(g, e) << "\n";
  }
}

ComputationGraph insert_initial_delays(const ComputationGraph& g, const StagePartition& p,
                                       RetimeTrace* trace) {
  if (p.num_layers != g.num_layers) throw std::invalid_argument("insert_initial_delays: partition out of range");
  p.check();
  const int n = p.num_stages() - 1;

  ComputationGraph out = g;
  for (const Cutset& c : find_feedforward_cutsets(g)) {
    if (n > 0)
      for (int e : c.edge_ids) out.edges[static_cast<std::size_t>(e)].delay += n;
    record(trace, RetimingStep{RetimingStep::Kind::InsertCutsetDelay, c.name, {}, c.edge_ids, n});
  }
  for (int l = 0; l < g.num_layers; ++l) {
    int k = p.stages_after(l);
    int e = g.grad_to_update_edge(l);
    if (k > 0) out.edges[static_cast<std::size_t>(e)].delay += 2 * k;
    record(trace, RetimingStep{RetimingStep::Kind::InsertFeedbackDelay, "layer " + std::to_string(l), {}, {e},
                               2 * k});
  }
  return out;
}

ComputationGraph retime_backward_cutset(const ComputationGraph& g, const std::vector<int>& layers,
                                        int amount, RetimeTrace* trace) {
  check_layers(g, layers);
  std::set<int> region;
  for (int l : layers) {
    region.insert(g.act_grad_ids[static_cast<std::size_t>(l)]);
    region.insert(g.weight_grad_ids[static_cast<std::size_t>(l)]);
  }
  std::string where = "backward domain, layers " + std::to_string(layers.front()) + ".." +
                      std::to_string(layers.back());
  return retime_region(g, region, amount, RetimingStep::Kind::RetimeBackwardCutset, where, trace);
}

ComputationGraph retime_forward_cutset(const ComputationGraph& g, const std::vector<int>& layers,
                                       int amount, RetimeTrace* trace) {
  check_layers(g, layers);
  std::set<int> region;
  for (int l : layers) {
    region.insert(g.forward_ids[static_cast<std::size_t>(l)]);
    region.insert(g.weight_update_ids[static_cast<std::size_t>(l)]);
  }
  std::string where = "forward domain, layers " + std::to_string(layers.front()) + ".." +
                      std::to_string(layers.back());
  // the forward pass moves delay from inward edges to outward edges, i.e. the
  // region fires earlier: swap roles by retiming the complement
  std::set<int> complement;
  for (int v = 0; v < g.num_nodes(); ++v)
    if (!region.count(v)) complement.insert(v);
  return retime_region(g, complement, amount, RetimingStep::Kind::RetimeForwardCutset, where, trace);
}

std::pair<ComputationGraph, DelayAssignment> compact(const ComputationGraph& g, const StagePartition& p,
                                                     RetimeTrace* trace) {
  if (p.num_layers != g.num_layers) throw std::invalid_argument("compact: partition out of range");
  ComputationGraph cur = g;

  const std::vector<int> interior = p.interior_boundaries();
  std::size_t iterations = 0;
  for (int b : interior) {
    if (++iterations > static_cast<std::size_t>(p.num_stages()))
      throw RetimingError("compact: iteration bound exceeded");
    // one forward-cutset pass over the whole region upstream of boundary b
    std::vector<int> upstream(static_cast<std::size_t>(b));
    for (int l = 0; l < b; ++l) upstream[static_cast<std::size_t>(l)] = l;
    cur = retime_forward_cutset(cur, upstream, 1, trace);
    int boundary_edge = cur.find_edge(cur.forward_ids[static_cast<std::size_t>(b - 1)],
                                      cur.forward_ids[static_cast<std::size_t>(b)], EdgeTag::ForwardAct);
    record(trace, RetimingStep{RetimingStep::Kind::LeaveBoundaryDelay,
                               "stage boundary at layer " + std::to_string(b), {}, {boundary_edge}, 1});
  }

  GraphCheckOptions check;
  check.enumerate_cycles = cur.num_layers <= 12;  // cycle count grows quadratically
  check_graph(cur, check);
  DelayAssignment extracted = extract_delay_assignment(cur);
  if (extracted != derive_delays(p.num_layers, p))
    throw RetimingError("compact: extracted delays disagree with the closed form");
  return {std::move(cur), std::move(extracted)};
}

DelayAssignment extract_delay_assignment(const ComputationGraph& g) {
  DelayAssignment a;
  for (int l = 0; l < g.num_layers; ++l) {
    int g2u = g.edges[static_cast<std::size_t>(g.grad_to_update_edge(l))].delay;
    int w2g = g.edges[static_cast<std::size_t>(g.weight_to_grad_edge(l))].delay;
    std::vector<int> a2g = g.act_to_grad_edges(l);
    int act = g.edges[static_cast<std::size_t>(a2g.front())].delay;
    for (int e : a2g)
      if (g.edges[static_cast<std::size_t>(e)].delay != act)
        throw RetimingError("extract: act-to-grad delays of layer " + std::to_string(l) + " disagree");
    int round_trip = g2u + w2g;
    a.gradient_delay.push_back(round_trip);
    a.weight_stash.push_back(w2g);
    a.activation_stash.push_back(act);
    a.staleness.push_back(round_trip > 0 ? round_trip + 1 : 0);
  }
  return a;
}

}  // namespace pipetrain
