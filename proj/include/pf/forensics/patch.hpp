#pragma once

#include <vector>

#include "pf/diffcore/tensor.hpp"
#include "pf/pipeline/manifest.hpp"

namespace pf {

// Per-patch two-class outputs of one image over an h x w grid. Storage is
// class-major: index (c * h + i) * w + j.
struct PatchGrid {
  std::size_t h = 0, w = 0;
  std::vector<double> logits;
  std::vector<double> probs;

  std::size_t patches() const { return h * w; }
  double prob(int cls, std::size_t i, std::size_t j) const { return probs[(std::size_t(cls) * h + i) * w + j]; }
  double fake_prob(std::size_t i, std::size_t j) const { return prob(kFake, i, j); }

  static PatchGrid from_logits(std::size_t h, std::size_t w, std::vector<double> logits);
  // Grid whose softmax equals the given per-patch fake probabilities (row-major).
  static PatchGrid from_fake_probs(std::size_t h, std::size_t w, const std::vector<double>& fake);
};

// One grid per image of an N x 2 x h x w logit tensor.
std::vector<PatchGrid> grids_from_logits(const Tensor<float>& logits);

struct PatchLoss {
  double loss = 0.0;
  std::size_t clamped = 0;  // patches whose target probability was raised to the log clamp
};

// Negative log-likelihood of the true class averaged over patches.
PatchLoss patch_loss(const PatchGrid& grid, int label);

struct Aggregate {
  int label = kReal;
  double fake_score = 0.0;  // mean fake probability over patches
};

// Softmax-average ensembling; an exact tie between the class means is real.
Aggregate aggregate(const PatchGrid& grid);

}  // namespace pf
