#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "pipetrain/graph.hpp"
#include "pipetrain/partition.hpp"
#include "pipetrain/planner.hpp"

namespace pipetrain {

/// One recorded transformation step, printable for the CLI's --explain mode.
struct RetimingStep {
  enum class Kind : std::uint8_t {
    InsertCutsetDelay,
    InsertFeedbackDelay,
    RetimeBackwardCutset,
    RetimeForwardCutset,
    LeaveBoundaryDelay,
  };
  Kind kind;
  std::string where;
  std::vector<int> edges_minus;  // edges whose delay decreased
  std::vector<int> edges_plus;   // edges whose delay increased
  int delta = 0;
};

const char* retiming_step_name(RetimingStep::Kind k);

struct RetimeTrace {
  std::vector<RetimingStep> steps;
  void print(std::ostream& os, const ComputationGraph& g) const;
};

struct RetimingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Step 1+2 of the pipeline derivation. For a partition with n = num_stages-1
/// interior boundaries: the input/output feedforward cutset edges receive n
/// delay units each, and every layer's grad-to-update feedback edge receives
/// 2*S(l) units (its round trip through the backward and forward passes).
ComputationGraph insert_initial_delays(const ComputationGraph& g, const StagePartition& p,
                                       RetimeTrace* trace = nullptr);

/// Moves `amount` delay units from every outward edge of the backward domain
/// {ActGrad(l), WeightGrad(l) : l in layers} onto every inward edge. The layer
/// set must be contiguous (a stage group is retimed as one unit). Throws
/// RetimingError and leaves the input untouched if any outward edge would go
/// negative.
ComputationGraph retime_backward_cutset(const ComputationGraph& g, const std::vector<int>& layers,
                                        int amount, RetimeTrace* trace = nullptr);

/// Mirror pass on the forward domain {Forward(l), WeightUpdate(l)}: moves
/// `amount` units from every inward edge onto every outward edge.
ComputationGraph retime_forward_cutset(const ComputationGraph& g, const std::vector<int>& layers,
                                       int amount, RetimeTrace* trace = nullptr);

/// Recursive delay compaction. Starting from the freshly inserted delays,
/// walks the interior stage boundaries outermost (input-most) first; each
/// iteration retimes the whole upstream forward region across the boundary,
/// drains one unit from the input cutset and from each upstream feedback
/// edge into the stash edges, and leaves one delay element at the boundary.
/// Returns the compacted graph plus the delay assignment read back from it,
/// which is verified against the closed form derive_delays(p).
std::pair<ComputationGraph, DelayAssignment> compact(const ComputationGraph& g, const StagePartition& p,
                                                     RetimeTrace* trace = nullptr);

/// Reads the per-layer delay structure off a compacted graph: the gradient
/// delay of layer l is the feedback round trip (grad-to-update plus
/// weight-to-grad edge delay); stash depths come from the act-to-grad and
/// weight-to-grad edges.
DelayAssignment extract_delay_assignment(const ComputationGraph& g);

}  // namespace pipetrain
