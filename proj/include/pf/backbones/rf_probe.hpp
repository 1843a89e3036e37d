#pragma once

// Perturbation probe of a backbone's receptive field: pixels outside the
// computed window of an output cell must leave that cell bit-identical, the
// window's center pixel must move it.

#include <cmath>
#include <string>

#include "pf/backbones/backbone.hpp"
#include "pf/backbones/receptive_field.hpp"

namespace pf {

struct RfProbeResult {
  int trials = 0;
  int outside_unchanged = 0;  // trials where an out-of-window perturbation left the cell bit-identical
  int center_changed = 0;     // trials where the center perturbation moved the cell
  bool ok() const { return outside_unchanged == trials && center_changed == trials; }
};

inline RfProbeResult probe_receptive_field(const BackboneSpec& spec, std::size_t size, int trials, std::uint64_t seed) {
  const auto plan = backbone_plan(spec);
  const auto info = receptive_field(plan);
  Rng rng(seed);
  Graph<float> g = build_graph<float>(plan);
  g.initialize(rng.next_u64());
  // Random statistics in evaluation mode: normalization is then per-element,
  // so nothing couples distant pixels except the convolutions themselves.
  for (auto& b : g.buffers())
    for (auto& v : b.tensor->values())
      v = b.name.ends_with("running_var") ? float(rng.uniform(0.5, 2.0)) : float(rng.uniform(-0.2, 0.2));
  g.set_training(false);

  Tensor<float> x({1, 3, size, size});
  for (auto& v : x.values()) v = float(rng.uniform());
  const Tensor<float> base = g.forward(x);
  const std::size_t gh = base.dim(2), gw = base.dim(3);
  const long half = (info.rf - 1) / 2;

  RfProbeResult r;
  for (int t = 0; t < trials; ++t) {
    const auto ci = static_cast<std::size_t>(rng.uniform_int(0, long(gh) - 1));
    const auto cj = static_cast<std::size_t>(rng.uniform_int(0, long(gw) - 1));
    const long cy = std::lround(info.start + double(ci * info.jump));
    const long cx = std::lround(info.start + double(cj * info.jump));
    auto inside = [&](long y, long xx) { return std::abs(y - cy) <= half && std::abs(xx - cx) <= half; };

    long py, px;
    int guard = 0;
    do {
      py = rng.uniform_int(0, long(size) - 1);
      px = rng.uniform_int(0, long(size) - 1);
    } while (inside(py, px) && ++guard < 100000);
    if (inside(py, px)) continue;  // window covers the whole image
    const auto ch = static_cast<std::size_t>(rng.uniform_int(0, 2));

    Tensor<float> xo = x;
    xo.at(0, ch, std::size_t(py), std::size_t(px)) += 50.f;
    const Tensor<float> yo = g.forward(xo);
    const bool same = yo.at(0, 0, ci, cj) == base.at(0, 0, ci, cj) && yo.at(0, 1, ci, cj) == base.at(0, 1, ci, cj);

    Tensor<float> xc = x;
    for (std::size_t c = 0; c < 3; ++c) xc.at(0, c, std::size_t(cy), std::size_t(cx)) += 50.f;
    const Tensor<float> yc = g.forward(xc);
    const bool moved = yc.at(0, 0, ci, cj) != base.at(0, 0, ci, cj) || yc.at(0, 1, ci, cj) != base.at(0, 1, ci, cj);

    ++r.trials;
    r.outside_unchanged += same;
    r.center_changed += moved;
  }
  return r;
}

}  // namespace pf
