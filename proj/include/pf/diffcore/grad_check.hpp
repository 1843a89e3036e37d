#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pf/diffcore/graph.hpp"

namespace pf {

struct GradCheckOptions {
  // Central-difference step; 0 picks 2^-8 for float and 1e-6 for double.
  double step = 0.0;
  // Error denominator is max(|analytic|, |numeric|, floor), so near-zero
  // gradients are compared absolutely. 0 picks 1.0.
  double floor = 0.0;
  std::uint64_t seed = 0;  // draws the random output projection
  bool check_input = true;
};

struct GradCheckEntry {
  std::string name;
  std::size_t count = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

// Compares backward() against central finite differences of the scalar
// L = sum(r * forward(input)) for a fixed random projection r. Intended for
// graphs with fewer than 10^4 parameter scalars.
template <typename T>
GradCheckReport grad_check(Graph<T>& graph, const Tensor<T>& input, double tolerance,
                           const GradCheckOptions& opts = {});

}  // namespace pf
