#include "pf/forensics/patch.hpp"

#include <algorithm>
#include <cmath>

#include "pf/diffcore/ops.hpp"

namespace pf {

PatchGrid PatchGrid::from_logits(std::size_t h, std::size_t w, std::vector<double> logits) {
  if (logits.size() != 2 * h * w) throw StructuralError("patch grid needs 2*h*w logits");
  PatchGrid g{h, w, std::move(logits), {}};
  g.probs.resize(g.logits.size());
  const std::size_t n = h * w;
  for (std::size_t p = 0; p < n; ++p) {
    const double a = g.logits[p], b = g.logits[n + p];
    const double m = std::max(a, b);
    const double ea = std::exp(a - m), eb = std::exp(b - m);
    g.probs[p] = ea / (ea + eb);
    g.probs[n + p] = eb / (ea + eb);
  }
  return g;
}

PatchGrid PatchGrid::from_fake_probs(std::size_t h, std::size_t w, const std::vector<double>& fake) {
  if (fake.size() != h * w) throw StructuralError("patch grid needs h*w probabilities");
  PatchGrid g{h, w, std::vector<double>(2 * h * w), std::vector<double>(2 * h * w)};
  for (std::size_t p = 0; p < h * w; ++p) {
    if (!(fake[p] >= 0.0 && fake[p] <= 1.0)) throw NumericError("fake probability outside [0, 1]");
    g.probs[p] = 1.0 - fake[p];
    g.probs[h * w + p] = fake[p];
    g.logits[p] = 0.0;
    g.logits[h * w + p] = std::log(std::max(fake[p], kLogClamp)) - std::log(std::max(1.0 - fake[p], kLogClamp));
  }
  return g;
}

std::vector<PatchGrid> grids_from_logits(const Tensor<float>& logits) {
  if (logits.rank() != 4 || logits.dim(1) != 2)
    throw StructuralError("expected N x 2 x h x w logits, got " + shape_str(logits.shape()));
  const std::size_t N = logits.dim(0), h = logits.dim(2), w = logits.dim(3);
  std::vector<PatchGrid> grids;
  grids.reserve(N);
  for (std::size_t n = 0; n < N; ++n) {
    const float* src = logits.data() + n * 2 * h * w;
    grids.push_back(PatchGrid::from_logits(h, w, std::vector<double>(src, src + 2 * h * w)));
  }
  return grids;
}

PatchLoss patch_loss(const PatchGrid& grid, int label) {
  if (label != kReal && label != kFake) throw DataError("label must be 0 (real) or 1 (fake)");
  if (grid.patches() == 0) throw StructuralError("empty patch grid");
  PatchLoss r;
  double sum = 0.0;
  for (std::size_t i = 0; i < grid.h; ++i)
    for (std::size_t j = 0; j < grid.w; ++j) {
      double p = grid.prob(label, i, j);
      if (p < kLogClamp) {
        p = kLogClamp;
        ++r.clamped;
      }
      sum -= std::log(p);
    }
  r.loss = sum / double(grid.patches());
  return r;
}

Aggregate aggregate(const PatchGrid& grid) {
  if (grid.patches() == 0) throw StructuralError("empty patch grid");
  double real = 0.0, fake = 0.0;
  for (std::size_t i = 0; i < grid.h; ++i)
    for (std::size_t j = 0; j < grid.w; ++j) {
      real += grid.prob(kReal, i, j);
      fake += grid.prob(kFake, i, j);
    }
  const double n = double(grid.patches());
  return {fake / n > real / n ? kFake : kReal, fake / n};
}

}  // namespace pf
