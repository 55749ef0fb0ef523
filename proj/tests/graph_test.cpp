#include "pipetrain/graph.hpp"

#include <set>

#include "doctest.h"
#include "test_support.hpp"

using namespace pipetrain;
using namespace pipetrain::test;

TEST_CASE("canonical graph structure") {
  SUBCASE("smallest instance has six nodes") {
    ComputationGraph g = build_training_graph(1);
    CHECK(g.num_nodes() == 6);
    CHECK(g.num_layers == 1);
    check_graph(g);
  }
  SUBCASE("three layers give fourteen nodes and a four-edge forward chain") {
    ComputationGraph g = build_training_graph(3);
    CHECK(g.num_nodes() == 14);
    int forward_edges = 0;
    for (const Edge& e : g.edges)
      if (e.tag == EdgeTag::ForwardAct) ++forward_edges;
    CHECK(forward_edges == 4);
    check_graph(g);
  }
  SUBCASE("zero layers rejected") {
    CHECK_THROWS_AS(build_training_graph(0), std::invalid_argument);
  }
  SUBCASE("every layer has its stash and feedback edges") {
    ComputationGraph g = build_training_graph(2);
    for (int l = 0; l < 2; ++l) {
      CHECK(g.grad_to_update_edge(l) >= 0);
      CHECK(g.weight_to_grad_edge(l) >= 0);
      CHECK(g.act_to_grad_edges(l).size() == 2);
      CHECK(g.find_edge(g.weight_update_ids[l], g.forward_ids[l], EdgeTag::UpdateToWeight) >= 0);
    }
  }
}

TEST_CASE("every cycle passes through exactly one WeightUpdate node") {
  for (int layers : {1, 2, 3}) {
    ComputationGraph g = build_training_graph(layers);
    auto cycles = enumerate_simple_cycles(g);
    CHECK(!cycles.empty());
    for (const auto& cyc : cycles) {
      int updates = 0;
      for (int e : cyc)
        if (g.node(g.edges[e].src).kind == NodeKind::WeightUpdate) ++updates;
      CHECK(updates == 1);
    }
  }
}

TEST_CASE("feedforward cutsets") {
  SUBCASE("input and output boundaries are reported for the canonical graph") {
    ComputationGraph g = build_training_graph(2);
    auto cuts = find_feedforward_cutsets(g);
    REQUIRE(cuts.size() == 2);
    CHECK(cuts[0].name == "input-boundary");
    CHECK(cuts[0].edge_ids.size() == 1);
    CHECK(cuts[1].name == "output-boundary");
    CHECK(cuts[1].edge_ids.size() == 2);
    // the pair: forward into the folded loss, gradient out of it
    const Edge& fwd = g.edges[cuts[1].edge_ids[0]];
    const Edge& bwd = g.edges[cuts[1].edge_ids[1]];
    CHECK(fwd.dst == g.output_id);
    CHECK(bwd.src == g.output_id);
    CHECK(g.node(bwd.dst).kind == NodeKind::ActGrad);
  }
  SUBCASE("interior layer boundary is not feedforward") {
    ComputationGraph g = build_training_graph(3);
    Cutset c = boundary_cutset(g, 1);
    CHECK_FALSE(c.feedforward);
    CHECK_FALSE(c.unidirectional());
    bool has_fwd = false, has_bwd = false;
    for (int e : c.edge_ids) {
      if (g.edges[e].tag == EdgeTag::ForwardAct) has_fwd = true;
      if (g.edges[e].tag == EdgeTag::BackwardDelta) has_bwd = true;
    }
    CHECK(has_fwd);
    CHECK(has_bwd);
  }
  SUBCASE("single-node side is feedforward iff its edges point one way") {
    ComputationGraph g = build_training_graph(2);
    // Input: one outgoing edge only
    CHECK(is_feedforward_cut(g, {g.input_id}, g.edges_out(g.input_id)));
    // Output: one in, one out -> mixed
    std::vector<int> out_edges = g.edges_in(g.output_id);
    for (int e : g.edges_out(g.output_id)) out_edges.push_back(e);
    CHECK_FALSE(is_feedforward_cut(g, {g.output_id}, out_edges));
  }
}

TEST_CASE("cutset soundness: inserted delays shift the output stream") {
  // frozen updates: delay insertion on the gradient return is the
  // delayed-update transformation and only the forward function is
  // latency-comparable
  for (std::uint64_t seed : {11u, 12u, 13u}) {
    ComputationGraph g = build_training_graph(3);
    auto sem = random_linear_semantics(g, seed, /*frozen=*/true);
    auto stream = random_stream(40, seed);
    auto base = simulate(g, sem, stream, 40);
    for (const Cutset& cut : find_feedforward_cutsets(g)) {
      for (int k : {1, 2, 3}) {
        ComputationGraph d = g;
        for (int e : cut.edge_ids) d.edges[e].delay += k;
        auto shifted = simulate(d, sem, stream, 40);
        for (int t = k; t < 40; ++t) {
          CHECK(shifted[t] == base[t - k]);
        }
      }
    }
  }
}

TEST_CASE("simulate") {
  SUBCASE("identity chain with zero delays has zero latency") {
    // In -> Forward(0) -> Out with identity semantics
    ComputationGraph g;
    g.num_layers = 1;
    g.nodes = {{0, NodeKind::Input, -1}, {1, NodeKind::Forward, 0}, {2, NodeKind::Output, -1}};
    g.input_id = 0;
    g.output_id = 2;
    g.forward_ids = {1};
    g.edges = {{0, 1, 0, EdgeTag::ForwardAct}, {1, 2, 0, EdgeTag::ForwardAct}};
    std::vector<NodeSemantics> sem(3);
    sem[0].eval = [](std::span<const double>) { return 0.0; };
    sem[1].eval = [](std::span<const double> in) { return in[0]; };
    sem[2].eval = [](std::span<const double> in) { return in[0]; };
    std::vector<double> stream{1, 2, 3};
    auto out = simulate(g, sem, stream, 3);
    CHECK(out == std::vector<double>{1, 2, 3});

    SUBCASE("one delay element shifts by one step, first value is the initial value") {
      g.edges[0].delay = 1;
      auto shifted = simulate(g, sem, stream, 3);
      CHECK(shifted == std::vector<double>{0, 1, 2});
    }
    SUBCASE("declared initial value fills the pre-arrival ticks") {
      g.edges[0].delay = 2;
      SimulateOptions opt;
      opt.delay_initial_value = 7.0;
      auto shifted = simulate(g, sem, stream, 3, opt);
      CHECK(shifted == std::vector<double>{7, 7, 1});
    }
    SUBCASE("negative steps rejected") {
      CHECK_THROWS_AS(simulate(g, sem, stream, -1), std::invalid_argument);
    }
    SUBCASE("unbound semantics rejected") {
      std::vector<NodeSemantics> missing(3);
      missing[0].eval = [](std::span<const double>) { return 0.0; };
      CHECK_THROWS_AS(simulate(g, missing, stream, 3), std::invalid_argument);
    }
  }

  SUBCASE("frozen-weight linear layer graph: retimed equals original after the latency shift") {
    ComputationGraph g = build_training_graph(2);
    auto sem = random_linear_semantics(g, 99, /*frozen=*/true);
    auto stream = random_stream(30, 99);
    auto base = simulate(g, sem, stream, 30);

    // move one delay across the input feedforward cutset by hand
    ComputationGraph d = g;
    d.edges[g.find_edge(g.input_id, g.forward_ids[0], EdgeTag::ForwardAct)].delay += 1;
    auto shifted = simulate(d, sem, stream, 30);
    for (int t = 1; t < 30; ++t) CHECK(shifted[t] == base[t - 1]);
  }

  SUBCASE("canonical graph with active updates trains deterministically") {
    ComputationGraph g = build_training_graph(2);
    auto sem = random_linear_semantics(g, 5, /*frozen=*/false);
    auto stream = random_stream(25, 5);
    auto a = simulate(g, sem, stream, 25);
    auto b = simulate(g, sem, stream, 25);
    CHECK(a == b);
  }
}

TEST_CASE("graph JSON round-trip") {
  ComputationGraph g = build_training_graph(3);
  g.edges[0].delay = 2;
  g.edges[5].delay = 4;
  std::string path = "graph_roundtrip_test.json";
  save_graph(g, path);
  ComputationGraph r = load_graph(path);
  CHECK(r.num_layers == g.num_layers);
  REQUIRE(r.num_edges() == g.num_edges());
  REQUIRE(r.num_nodes() == g.num_nodes());
  for (int e = 0; e < g.num_edges(); ++e) {
    CHECK(r.edges[e].src == g.edges[e].src);
    CHECK(r.edges[e].dst == g.edges[e].dst);
    CHECK(r.edges[e].delay == g.edges[e].delay);
    CHECK(r.edges[e].tag == g.edges[e].tag);
  }
  CHECK(graph_to_json(r) == graph_to_json(g));
  std::remove(path.c_str());
}
