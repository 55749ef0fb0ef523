#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace pipetrain {

enum class NodeKind : std::uint8_t { Input, Output, Forward, ActGrad, WeightGrad, WeightUpdate };

const char* node_kind_name(NodeKind k);

struct Node {
  int id = -1;
  NodeKind kind = NodeKind::Input;
  int layer = -1;  // -1 for Input/Output
};

enum class EdgeTag : std::uint8_t {
  ForwardAct,     // activation along the forward chain
  BackwardDelta,  // activation gradient along the backward chain (incl. the tap into WeightGrad)
  ActToGrad,      // stashed activation into the backward computation
  WeightToGrad,   // weight version consumed by the gradient computation
  GradToUpdate,   // gradient feedback into the weight update
  UpdateToWeight, // live weight into the forward computation
};

const char* edge_tag_name(EdgeTag t);

struct Edge {
  int src = -1;
  int dst = -1;
  int delay = 0;  // delay elements, units of one pipeline iteration
  EdgeTag tag = EdgeTag::ForwardAct;
};

/// Dataflow IR of one training iteration: forward chain, backward chain and the
/// per-layer weight feedback loops. Node and edge ids are dense and stay stable
/// across delay insertion and retiming (those transforms only touch delays).
struct ComputationGraph {
  int num_layers = 0;
  std::vector<Node> nodes;
  std::vector<Edge> edges;

  int input_id = -1;
  int output_id = -1;
  std::vector<int> forward_ids, act_grad_ids, weight_grad_ids, weight_update_ids;

  const Node& node(int id) const { return nodes[static_cast<std::size_t>(id)]; }
  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_edges() const { return static_cast<int>(edges.size()); }

  std::vector<int> edges_in(int node_id) const;
  std::vector<int> edges_out(int node_id) const;

  /// Unique edge src->dst with the given tag; -1 if absent.
  int find_edge(int src, int dst, EdgeTag tag) const;

  /// Per-layer named edges of the canonical construction.
  int grad_to_update_edge(int layer) const;
  int weight_to_grad_edge(int layer) const;
  std::vector<int> act_to_grad_edges(int layer) const;
};

/// Canonical L-layer training graph with zero delay on every edge.
///
/// Per layer l: Forward(l) on the chain; ActGrad(l) receives the incoming
/// activation gradient and forwards it both upstream and into WeightGrad(l);
/// WeightGrad(l) additionally reads the stashed activation (act-to-grad) and
/// the weight version (weight-to-grad); WeightUpdate(l) closes the feedback
/// loop (grad-to-update in, update-to-weight out). The loss is folded into the
/// Output node, which drives ActGrad(L-1) directly.
ComputationGraph build_training_graph(int num_layers);

struct GraphCheckOptions {
  bool enumerate_cycles = true;  // cycle checks are exponential-ish; fine at toolkit scale
};

/// Throws std::logic_error when a structural invariant is violated:
/// node-kind multiplicity, nonnegative delays, acyclic forward/backward
/// chains, and (optionally) every cycle passing through exactly one
/// WeightUpdate node.
void check_graph(const ComputationGraph& g, const GraphCheckOptions& opt = {});

/// All simple cycles, each as an edge-id sequence.
std::vector<std::vector<int>> enumerate_simple_cycles(const ComputationGraph& g);

int cycle_delay(const ComputationGraph& g, const std::vector<int>& cycle_edges);

// ---------------------------------------------------------------------------
// Cutsets

struct Cutset {
  enum class Direction : std::uint8_t { Inward, Outward };

  std::string name;
  std::vector<int> edge_ids;
  std::vector<Direction> direction;  // relative to the downstream side of the cut
  bool feedforward = false;

  bool unidirectional() const;
};

/// Strict test: edges of `cut_edges` all cross the {side, complement}
/// partition in one direction.
bool is_feedforward_cut(const ComputationGraph& g, const std::vector<int>& side_nodes,
                        const std::vector<int>& cut_edges);

/// Structural boundary cut at `position`:
///   position == 0            -> input boundary  ({Input} vs rest)
///   position in [1, L-1]     -> interior boundary between layers position-1, position
///   position == L            -> output boundary (the Forward(L-1)->Output,
///                               Output->ActGrad(L-1) pair around the folded loss)
Cutset boundary_cutset(const ComputationGraph& g, int position);

/// Boundary cuts that admit delay insertion. For the canonical graph these are
/// exactly the input and output boundaries; interior boundaries cut the
/// forward and backward chains in opposite directions. The output pair
/// straddles the folded loss node and is classified by traversal order through
/// the fold rather than by the strict two-sided rule.
std::vector<Cutset> find_feedforward_cutsets(const ComputationGraph& g);

// ---------------------------------------------------------------------------
// Serialization (JSON document, round-trip exact)

std::string graph_to_json(const ComputationGraph& g);
ComputationGraph graph_from_json(const std::string& text);
void save_graph(const ComputationGraph& g, const std::string& path);
ComputationGraph load_graph(const std::string& path);

// ---------------------------------------------------------------------------
// Cycle-accurate functional simulation

/// Node behaviour for simulate(). WeightUpdate nodes are stateful registers:
/// they emit `state` each tick and commit `update(state, inputs)` at tick end,
/// which keeps zero-delay feedback loops well defined. All other kinds are
/// pure functions of their post-delay inputs (ordered by edge id).
struct NodeSemantics {
  std::function<double(std::span<const double>)> eval;                  // non-register nodes
  double initial_state = 0.0;                                           // registers
  std::function<double(double, std::span<const double>)> update;        // registers
};

struct SimulateOptions {
  double delay_initial_value = 0.0;
};

/// Runs `steps` ticks and returns the Output node's value per tick. The input
/// stream is zero-extended. Throws on negative steps, on nodes with no bound
/// semantics, and on zero-delay cycles that do not pass through a register.
std::vector<double> simulate(const ComputationGraph& g,
                             const std::vector<NodeSemantics>& semantics,
                             std::span<const double> input_stream, int steps,
                             const SimulateOptions& opt = {});

}  // namespace pipetrain
