#pragma once

#include <span>
#include <vector>

#include "pf/backbones/backbone.hpp"

namespace pf {

// Receptive field of one output unit in input pixels. `start` is the input
// coordinate (pixel centers at integers) of output cell 0's center.
struct ReceptiveFieldInfo {
  long rf = 1;
  long jump = 1;
  double start = 0.0;

  // Receptive field of `inner` applied after this one.
  ReceptiveFieldInfo then(const ReceptiveFieldInfo& inner) const;

  bool operator==(const ReceptiveFieldInfo&) const = default;
};

// Chain recurrence starting from rf = 1, jump = 1:
//   rf_out = rf_in + (k - 1) * jump_in,  jump_out = jump_in * s,
//   start_out = start_in + ((k - 1) / 2 - pad) * jump_in.
// Pointwise and elementwise layers contribute k = 1, s = 1. Ops without a
// pixel-window meaning (dense, upsampling) raise StructuralError.
ReceptiveFieldInfo receptive_field(std::span<const LayerKind> layers);

// Same recurrence over a plan DAG. A residual_add takes the wider operand;
// both operands must agree on jump and start.
ReceptiveFieldInfo receptive_field(const std::vector<PlanNode>& plan);

// Per-layer view used for composition.
ReceptiveFieldInfo layer_receptive_field(const LayerKind& kind);

}  // namespace pf
