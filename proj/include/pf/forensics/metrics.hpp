#pragma once

#include <span>
#include <vector>

#include "pf/forensics/patch.hpp"

namespace pf {

// Non-interpolated average precision with fake (label 1) as the positive
// class. Scores are swept in descending order; equal scores form one
// threshold. Throws MetricError unless both classes are present.
double average_precision(std::span<const double> scores, std::span<const int> labels);

// Fraction of all patches whose argmax class equals their image's label.
// A patch tie (p_fake == p_real) counts as a real prediction.
double raw_patch_accuracy(std::span<const PatchGrid> grids, std::span<const int> labels);

}  // namespace pf
