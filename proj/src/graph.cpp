#include "pipetrain/graph.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace pipetrain {

const char* node_kind_name(NodeKind k) {
  switch (k) {
    case NodeKind::Input: return "input";
    case NodeKind::Output: return "output";
    case NodeKind::Forward: return "forward";
    case NodeKind::ActGrad: return "act_grad";
    case NodeKind::WeightGrad: return "weight_grad";
    case NodeKind::WeightUpdate: return "weight_update";
  }
  return "?";
}

const char* edge_tag_name(EdgeTag t) {
  switch (t) {
    case EdgeTag::ForwardAct: return "forward_act";
    case EdgeTag::BackwardDelta: return "backward_delta";
    case EdgeTag::ActToGrad: return "act_to_grad";
    case EdgeTag::WeightToGrad: return "weight_to_grad";
    case EdgeTag::GradToUpdate: return "grad_to_update";
    case EdgeTag::UpdateToWeight: return "update_to_weight";
  }
  return "?";
}

std::vector<int> ComputationGraph::edges_in(int node_id) const {
  std::vector<int> out;
  for (int e = 0; e < num_edges(); ++e)
    if (edges[static_cast<std::size_t>(e)].dst == node_id) out.push_back(e);
  return out;
}

std::vector<int> ComputationGraph::edges_out(int node_id) const {
  std::vector<int> out;
  for (int e = 0; e < num_edges(); ++e)
    if (edges[static_cast<std::size_t>(e)].src == node_id) out.push_back(e);
  return out;
}

int ComputationGraph::find_edge(int src, int dst, EdgeTag tag) const {
  for (int e = 0; e < num_edges(); ++e) {
    const Edge& ed = edges[static_cast<std::size_t>(e)];
    if (ed.src == src && ed.dst == dst && ed.tag == tag) return e;
  }
  return -1;
}

int ComputationGraph::grad_to_update_edge(int layer) const {
  return find_edge(weight_grad_ids.at(static_cast<std::size_t>(layer)),
                   weight_update_ids.at(static_cast<std::size_t>(layer)), EdgeTag::GradToUpdate);
}

int ComputationGraph::weight_to_grad_edge(int layer) const {
  return find_edge(weight_update_ids.at(static_cast<std::size_t>(layer)),
                   weight_grad_ids.at(static_cast<std::size_t>(layer)), EdgeTag::WeightToGrad);
}

std::vector<int> ComputationGraph::act_to_grad_edges(int layer) const {
  std::vector<int> out;
  for (int e = 0; e < num_edges(); ++e) {
    const Edge& ed = edges[static_cast<std::size_t>(e)];
    if (ed.tag == EdgeTag::ActToGrad && node(ed.src).layer == layer) out.push_back(e);
  }
  return out;
}

ComputationGraph build_training_graph(int num_layers) {
  if (num_layers < 1) throw std::invalid_argument("build_training_graph: num_layers must be >= 1");
  ComputationGraph g;
  g.num_layers = num_layers;

  auto add_node = [&g](NodeKind k, int layer) {
    int id = g.num_nodes();
    g.nodes.push_back(Node{id, k, layer});
    return id;
  };
  auto add_edge = [&g](int src, int dst, EdgeTag tag) {
    g.edges.push_back(Edge{src, dst, 0, tag});
  };

  g.input_id = add_node(NodeKind::Input, -1);
  for (int l = 0; l < num_layers; ++l) g.forward_ids.push_back(add_node(NodeKind::Forward, l));
  g.output_id = add_node(NodeKind::Output, -1);
  for (int l = 0; l < num_layers; ++l) g.act_grad_ids.push_back(add_node(NodeKind::ActGrad, l));
  for (int l = 0; l < num_layers; ++l) g.weight_grad_ids.push_back(add_node(NodeKind::WeightGrad, l));
  for (int l = 0; l < num_layers; ++l) g.weight_update_ids.push_back(add_node(NodeKind::WeightUpdate, l));

  // forward chain
  add_edge(g.input_id, g.forward_ids[0], EdgeTag::ForwardAct);
  for (int l = 0; l + 1 < num_layers; ++l)
    add_edge(g.forward_ids[static_cast<std::size_t>(l)], g.forward_ids[static_cast<std::size_t>(l + 1)],
             EdgeTag::ForwardAct);
  add_edge(g.forward_ids[static_cast<std::size_t>(num_layers - 1)], g.output_id, EdgeTag::ForwardAct);

  // backward chain: the folded loss (Output) drives ActGrad(L-1); each ActGrad
  // forwards the gradient upstream and taps it into its layer's WeightGrad
  add_edge(g.output_id, g.act_grad_ids[static_cast<std::size_t>(num_layers - 1)], EdgeTag::BackwardDelta);
  for (int l = num_layers - 1; l >= 1; --l)
    add_edge(g.act_grad_ids[static_cast<std::size_t>(l)], g.act_grad_ids[static_cast<std::size_t>(l - 1)],
             EdgeTag::BackwardDelta);
  for (int l = 0; l < num_layers; ++l)
    add_edge(g.act_grad_ids[static_cast<std::size_t>(l)], g.weight_grad_ids[static_cast<std::size_t>(l)],
             EdgeTag::BackwardDelta);

  // per-layer stash and feedback edges
  for (int l = 0; l < num_layers; ++l) {
    add_edge(g.forward_ids[static_cast<std::size_t>(l)], g.act_grad_ids[static_cast<std::size_t>(l)],
             EdgeTag::ActToGrad);
    add_edge(g.forward_ids[static_cast<std::size_t>(l)], g.weight_grad_ids[static_cast<std::size_t>(l)],
             EdgeTag::ActToGrad);
    add_edge(g.weight_update_ids[static_cast<std::size_t>(l)], g.weight_grad_ids[static_cast<std::size_t>(l)],
             EdgeTag::WeightToGrad);
    add_edge(g.weight_grad_ids[static_cast<std::size_t>(l)], g.weight_update_ids[static_cast<std::size_t>(l)],
             EdgeTag::GradToUpdate);
    add_edge(g.weight_update_ids[static_cast<std::size_t>(l)], g.forward_ids[static_cast<std::size_t>(l)],
             EdgeTag::UpdateToWeight);
  }
  return g;
}

namespace {

bool subgraph_acyclic(const ComputationGraph& g, EdgeTag tag) {
  // Kahn over the tag-restricted subgraph
  std::vector<int> indeg(static_cast<std::size_t>(g.num_nodes()), 0);
  for (const Edge& e : g.edges)
    if (e.tag == tag) ++indeg[static_cast<std::size_t>(e.dst)];
  std::vector<int> stack;
  for (int v = 0; v < g.num_nodes(); ++v)
    if (indeg[static_cast<std::size_t>(v)] == 0) stack.push_back(v);
  int seen = 0;
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    ++seen;
    for (const Edge& e : g.edges)
      if (e.tag == tag && e.src == v && --indeg[static_cast<std::size_t>(e.dst)] == 0) stack.push_back(e.dst);
  }
  return seen == g.num_nodes();
}

void cycle_dfs(const ComputationGraph& g, int start, int v, std::vector<bool>& on_path,
               std::vector<int>& path_edges, std::vector<std::vector<int>>& out) {
  for (int e = 0; e < g.num_edges(); ++e) {
    const Edge& ed = g.edges[static_cast<std::size_t>(e)];
    if (ed.src != v) continue;
    if (ed.dst == start) {
      path_edges.push_back(e);
      out.push_back(path_edges);
      path_edges.pop_back();
      continue;
    }
    if (ed.dst < start || on_path[static_cast<std::size_t>(ed.dst)]) continue;
    on_path[static_cast<std::size_t>(ed.dst)] = true;
    path_edges.push_back(e);
    cycle_dfs(g, start, ed.dst, on_path, path_edges, out);
    path_edges.pop_back();
    on_path[static_cast<std::size_t>(ed.dst)] = false;
  }
}

}  // namespace

std::vector<std::vector<int>> enumerate_simple_cycles(const ComputationGraph& g) {
  // Each cycle is reported once, rooted at its smallest node id.
  std::vector<std::vector<int>> out;
  std::vector<bool> on_path(static_cast<std::size_t>(g.num_nodes()), false);
  std::vector<int> path_edges;
  for (int start = 0; start < g.num_nodes(); ++start) {
    on_path[static_cast<std::size_t>(start)] = true;
    cycle_dfs(g, start, start, on_path, path_edges, out);
    on_path[static_cast<std::size_t>(start)] = false;
  }
  return out;
}

int cycle_delay(const ComputationGraph& g, const std::vector<int>& cycle_edges) {
  int total = 0;
  for (int e : cycle_edges) total += g.edges[static_cast<std::size_t>(e)].delay;
  return total;
}

void check_graph(const ComputationGraph& g, const GraphCheckOptions& opt) {
  auto fail = [](const std::string& what) { throw std::logic_error("graph invariant violated: " + what); };

  int inputs = 0, outputs = 0;
  std::vector<int> fwd(static_cast<std::size_t>(g.num_layers), 0), ag = fwd, wg = fwd, wu = fwd;
  for (const Node& n : g.nodes) {
    switch (n.kind) {
      case NodeKind::Input: ++inputs; break;
      case NodeKind::Output: ++outputs; break;
      case NodeKind::Forward: ++fwd.at(static_cast<std::size_t>(n.layer)); break;
      case NodeKind::ActGrad: ++ag.at(static_cast<std::size_t>(n.layer)); break;
      case NodeKind::WeightGrad: ++wg.at(static_cast<std::size_t>(n.layer)); break;
      case NodeKind::WeightUpdate: ++wu.at(static_cast<std::size_t>(n.layer)); break;
    }
  }
  if (inputs != 1 || outputs != 1) fail("exactly one Input and one Output required");
  for (int l = 0; l < g.num_layers; ++l) {
    std::size_t i = static_cast<std::size_t>(l);
    if (fwd[i] != 1 || ag[i] != 1 || wg[i] != 1 || wu[i] != 1)
      fail("layer " + std::to_string(l) + " must have one node of each per-layer kind");
  }

  for (const Edge& e : g.edges) {
    if (e.delay < 0) fail("negative delay on edge");
    if (e.src < 0 || e.src >= g.num_nodes() || e.dst < 0 || e.dst >= g.num_nodes()) fail("edge endpoint out of range");
  }

  if (!subgraph_acyclic(g, EdgeTag::ForwardAct)) fail("forward-act subgraph has a cycle");
  if (!subgraph_acyclic(g, EdgeTag::BackwardDelta)) fail("backward-delta subgraph has a cycle");

  if (opt.enumerate_cycles) {
    for (const auto& cyc : enumerate_simple_cycles(g)) {
      int updates = 0;
      for (int e : cyc)
        if (g.node(g.edges[static_cast<std::size_t>(e)].src).kind == NodeKind::WeightUpdate) ++updates;
      if (updates != 1) fail("cycle passing through " + std::to_string(updates) + " WeightUpdate nodes");
    }
  }
}

// ---------------------------------------------------------------------------
// Cutsets

bool Cutset::unidirectional() const {
  if (direction.empty()) return false;
  for (Direction d : direction)
    if (d != direction.front()) return false;
  return true;
}

bool is_feedforward_cut(const ComputationGraph& g, const std::vector<int>& side_nodes,
                        const std::vector<int>& cut_edges) {
  std::set<int> side(side_nodes.begin(), side_nodes.end());
  std::set<int> cut(cut_edges.begin(), cut_edges.end());
  int forward = 0, backward = 0;
  for (int e = 0; e < g.num_edges(); ++e) {
    const Edge& ed = g.edges[static_cast<std::size_t>(e)];
    bool s = side.count(ed.src) > 0, d = side.count(ed.dst) > 0;
    if (s == d) {
      if (cut.count(e)) return false;  // claimed cut edge does not cross
      continue;
    }
    if (!cut.count(e)) return false;  // crossing edge missing from the cut
    (s ? ++forward : ++backward);
  }
  return forward == 0 || backward == 0;
}

Cutset boundary_cutset(const ComputationGraph& g, int position) {
  if (position < 0 || position > g.num_layers) throw std::out_of_range("boundary_cutset: position");
  Cutset c;
  if (position == 0) {
    c.name = "input-boundary";
    for (int e : g.edges_out(g.input_id)) {
      c.edge_ids.push_back(e);
      c.direction.push_back(Cutset::Direction::Inward);
    }
    c.feedforward = c.unidirectional();
    return c;
  }
  if (position == g.num_layers) {
    // The loss is folded into Output, so the boundary is the pair around it:
    // the forward activation entering the fold and the gradient leaving it.
    // Traversal order through the fold is uniform, which is what delay
    // insertion relies on; the pair is not a two-sided cut in the strict sense.
    c.name = "output-boundary";
    int last_fwd = g.forward_ids.back();
    int first_ag = g.act_grad_ids.back();
    c.edge_ids.push_back(g.find_edge(last_fwd, g.output_id, EdgeTag::ForwardAct));
    c.direction.push_back(Cutset::Direction::Inward);
    c.edge_ids.push_back(g.find_edge(g.output_id, first_ag, EdgeTag::BackwardDelta));
    c.direction.push_back(Cutset::Direction::Inward);
    c.feedforward = true;
    return c;
  }
  // interior boundary between layers position-1 and position: collect edges
  // crossing the split of per-layer node sets
  c.name = "interior-boundary@" + std::to_string(position);
  auto upstream = [&](int node_id) {
    const Node& n = g.node(node_id);
    if (n.kind == NodeKind::Input) return true;
    if (n.kind == NodeKind::Output) return false;
    return n.layer < position;
  };
  for (int e = 0; e < g.num_edges(); ++e) {
    const Edge& ed = g.edges[static_cast<std::size_t>(e)];
    bool s = upstream(ed.src), d = upstream(ed.dst);
    if (s == d) continue;
    c.edge_ids.push_back(e);
    c.direction.push_back(s ? Cutset::Direction::Outward : Cutset::Direction::Inward);
  }
  c.feedforward = c.unidirectional();
  return c;
}

std::vector<Cutset> find_feedforward_cutsets(const ComputationGraph& g) {
  std::vector<Cutset> out;
  for (int pos = 0; pos <= g.num_layers; ++pos) {
    Cutset c = boundary_cutset(g, pos);
    if (c.feedforward) out.push_back(std::move(c));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::string graph_to_json(const ComputationGraph& g) {
  nlohmann::json j;
  j["num_layers"] = g.num_layers;
  j["nodes"] = nlohmann::json::array();
  for (const Node& n : g.nodes)
    j["nodes"].push_back({{"id", n.id}, {"kind", node_kind_name(n.kind)}, {"layer", n.layer}});
  j["edges"] = nlohmann::json::array();
  for (const Edge& e : g.edges)
    j["edges"].push_back({{"src", e.src}, {"dst", e.dst}, {"delay", e.delay}, {"tag", edge_tag_name(e.tag)}});
  return j.dump(2);
}

namespace {

NodeKind parse_node_kind(const std::string& s) {
  for (NodeKind k : {NodeKind::Input, NodeKind::Output, NodeKind::Forward, NodeKind::ActGrad,
                     NodeKind::WeightGrad, NodeKind::WeightUpdate})
    if (s == node_kind_name(k)) return k;
  throw std::invalid_argument("unknown node kind: " + s);
}

EdgeTag parse_edge_tag(const std::string& s) {
  for (EdgeTag t : {EdgeTag::ForwardAct, EdgeTag::BackwardDelta, EdgeTag::ActToGrad, EdgeTag::WeightToGrad,
                    EdgeTag::GradToUpdate, EdgeTag::UpdateToWeight})
    if (s == edge_tag_name(t)) return t;
  throw std::invalid_argument("unknown edge tag: " + s);
}

}  // namespace

ComputationGraph graph_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  ComputationGraph g;
  g.num_layers = j.at("num_layers").get<int>();
  g.forward_ids.assign(static_cast<std::size_t>(g.num_layers), -1);
  g.act_grad_ids = g.forward_ids;
  g.weight_grad_ids = g.forward_ids;
  g.weight_update_ids = g.forward_ids;
  for (const auto& jn : j.at("nodes")) {
    Node n;
    n.id = jn.at("id").get<int>();
    n.kind = parse_node_kind(jn.at("kind").get<std::string>());
    n.layer = jn.at("layer").get<int>();
    if (n.id != static_cast<int>(g.nodes.size()))
      throw std::invalid_argument("graph_from_json: node ids must be dense and in order");
    g.nodes.push_back(n);
    switch (n.kind) {
      case NodeKind::Input: g.input_id = n.id; break;
      case NodeKind::Output: g.output_id = n.id; break;
      case NodeKind::Forward: g.forward_ids.at(static_cast<std::size_t>(n.layer)) = n.id; break;
      case NodeKind::ActGrad: g.act_grad_ids.at(static_cast<std::size_t>(n.layer)) = n.id; break;
      case NodeKind::WeightGrad: g.weight_grad_ids.at(static_cast<std::size_t>(n.layer)) = n.id; break;
      case NodeKind::WeightUpdate: g.weight_update_ids.at(static_cast<std::size_t>(n.layer)) = n.id; break;
    }
  }
  for (const auto& je : j.at("edges")) {
    Edge e;
    e.src = je.at("src").get<int>();
    e.dst = je.at("dst").get<int>();
    e.delay = je.at("delay").get<int>();
    e.tag = parse_edge_tag(je.at("tag").get<std::string>());
    g.edges.push_back(e);
  }
  return g;
}

void save_graph(const ComputationGraph& g, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_graph: cannot open " + path);
  out << graph_to_json(g) << "\n";
}

ComputationGraph load_graph(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_graph: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return graph_from_json(ss.str());
}

// ---------------------------------------------------------------------------
// Simulation

std::vector<double> simulate(const ComputationGraph& g, const std::vector<NodeSemantics>& semantics,
                             std::span<const double> input_stream, int steps, const SimulateOptions& opt) {
  if (steps < 0) throw std::invalid_argument("simulate: negative steps");
  if (static_cast<int>(semantics.size()) != g.num_nodes())
    throw std::invalid_argument("simulate: semantics size does not match node count");

  auto is_register = [&](int v) { return g.node(v).kind == NodeKind::WeightUpdate; };

  for (int v = 0; v < g.num_nodes(); ++v) {
    if (v == g.input_id) continue;
    if (is_register(v)) {
      if (!semantics[static_cast<std::size_t>(v)].update)
        throw std::invalid_argument("simulate: unbound update for register node " + std::to_string(v));
    } else if (!semantics[static_cast<std::size_t>(v)].eval) {
      throw std::invalid_argument("simulate: unbound semantics for node " + std::to_string(v));
    }
  }

  // Topological order over zero-delay edges; register outputs are state and
  // break dependency cycles, which is why every delay-free cycle must pass
  // through a WeightUpdate node.
  std::vector<int> indeg(static_cast<std::size_t>(g.num_nodes()), 0);
  for (const Edge& e : g.edges)
    if (e.delay == 0 && !is_register(e.src)) ++indeg[static_cast<std::size_t>(e.dst)];
  std::vector<int> order, stack;
  for (int v = 0; v < g.num_nodes(); ++v)
    if (indeg[static_cast<std::size_t>(v)] == 0) stack.push_back(v);
  while (!stack.empty()) {
    int v = stack.back();
    stack.pop_back();
    order.push_back(v);
    for (const Edge& e : g.edges)
      if (e.delay == 0 && !is_register(e.src) && e.src == v &&
          --indeg[static_cast<std::size_t>(e.dst)] == 0)
        stack.push_back(e.dst);
  }
  if (static_cast<int>(order.size()) != g.num_nodes())
    throw std::runtime_error("simulate: delay-free cycle without a register");

  // Per-edge delay lines: fifo[i] holds the value written i+1 ticks ago at read time.
  std::vector<std::vector<double>> fifo(static_cast<std::size_t>(g.num_edges()));
  std::vector<std::size_t> head(static_cast<std::size_t>(g.num_edges()), 0);
  for (int e = 0; e < g.num_edges(); ++e)
    fifo[static_cast<std::size_t>(e)].assign(static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].delay),
                                             opt.delay_initial_value);

  std::vector<std::vector<int>> in_edges(static_cast<std::size_t>(g.num_nodes()));
  for (int e = 0; e < g.num_edges(); ++e)
    in_edges[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].dst)].push_back(e);

  std::vector<double> value(static_cast<std::size_t>(g.num_nodes()), 0.0);
  std::vector<double> state(static_cast<std::size_t>(g.num_nodes()), 0.0);
  for (int v = 0; v < g.num_nodes(); ++v)
    if (is_register(v)) state[static_cast<std::size_t>(v)] = semantics[static_cast<std::size_t>(v)].initial_state;

  auto edge_value = [&](int e) {
    const auto& f = fifo[static_cast<std::size_t>(e)];
    if (f.empty()) return value[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].src)];
    return f[head[static_cast<std::size_t>(e)]];
  };

  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(steps));
  std::vector<double> inputs;

  for (int t = 0; t < steps; ++t) {
    // registers publish their state before anything else reads it
    for (int v = 0; v < g.num_nodes(); ++v)
      if (is_register(v)) value[static_cast<std::size_t>(v)] = state[static_cast<std::size_t>(v)];

    for (int v : order) {
      if (v == g.input_id) {
        value[static_cast<std::size_t>(v)] =
            t < static_cast<int>(input_stream.size()) ? input_stream[static_cast<std::size_t>(t)] : 0.0;
        continue;
      }
      if (is_register(v)) continue;
      inputs.clear();
      for (int e : in_edges[static_cast<std::size_t>(v)]) inputs.push_back(edge_value(e));
      value[static_cast<std::size_t>(v)] = semantics[static_cast<std::size_t>(v)].eval(inputs);
    }

    // register commits read post-delay inputs of this tick
    for (int v = 0; v < g.num_nodes(); ++v) {
      if (!is_register(v)) continue;
      inputs.clear();
      for (int e : in_edges[static_cast<std::size_t>(v)]) inputs.push_back(edge_value(e));
      state[static_cast<std::size_t>(v)] =
          semantics[static_cast<std::size_t>(v)].update(state[static_cast<std::size_t>(v)], inputs);
    }

    // advance delay lines
    for (int e = 0; e < g.num_edges(); ++e) {
      auto& f = fifo[static_cast<std::size_t>(e)];
      if (f.empty()) continue;
      f[head[static_cast<std::size_t>(e)]] = value[static_cast<std::size_t>(g.edges[static_cast<std::size_t>(e)].src)];
      head[static_cast<std::size_t>(e)] = (head[static_cast<std::size_t>(e)] + 1) % f.size();
    }

    out.push_back(value[static_cast<std::size_t>(g.output_id)]);
  }
  return out;
}

}  // namespace pipetrain
