#include "pf/forensics/metrics.hpp"

#include <algorithm>
#include <numeric>

namespace pf {

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw StructuralError("score and label counts differ");
  std::size_t positives = 0;
  for (int l : labels) {
    if (l != kReal && l != kFake) throw MetricError("labels must be binary");
    positives += l == kFake;
  }
  if (positives == 0 || positives == labels.size())
    throw MetricError("average precision needs both real and fake examples");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  double ap = 0.0, prev_recall = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t k = 0; k < order.size();) {
    const double threshold = scores[order[k]];
    for (; k < order.size() && scores[order[k]] == threshold; ++k) {
      ++seen;
      tp += labels[order[k]] == kFake;
    }
    const double recall = double(tp) / double(positives);
    ap += (recall - prev_recall) * (double(tp) / double(seen));
    prev_recall = recall;
  }
  return ap;
}

double raw_patch_accuracy(std::span<const PatchGrid> grids, std::span<const int> labels) {
  if (grids.size() != labels.size()) throw StructuralError("grid and label counts differ");
  std::size_t correct = 0, total = 0;
  for (std::size_t n = 0; n < grids.size(); ++n) {
    const auto& g = grids[n];
    for (std::size_t i = 0; i < g.h; ++i)
      for (std::size_t j = 0; j < g.w; ++j) {
        const int pred = g.prob(kFake, i, j) > g.prob(kReal, i, j) ? kFake : kReal;
        correct += pred == labels[n];
      }
    total += g.patches();
  }
  if (total == 0) throw MetricError("raw patch accuracy of an empty set");
  return double(correct) / double(total);
}

}  // namespace pf
