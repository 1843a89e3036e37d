#pragma once

// Random small instances of every diffcore primitive for finite-difference
// checks. Input values are drawn so that no kink (relu at 0, maxpool ties) lies
// within the difference step.

#include <algorithm>
#include <string>
#include <vector>

#include "pf/diffcore/graph.hpp"

namespace pf {

template <typename T>
struct PrimitiveCase {
  std::string label;
  Graph<T> graph;
  Tensor<T> input;
  bool training = true;
};

inline std::vector<LayerOp> all_primitive_ops() {
  return {LayerOp::conv2d,       LayerOp::separable_conv2d, LayerOp::maxpool2d,  LayerOp::batchnorm2d,
          LayerOp::relu,         LayerOp::residual_add,     LayerOp::pointwise_conv, LayerOp::leaky_relu,
          LayerOp::sigmoid,      LayerOp::upsample_nearest, LayerOp::dense};
}

template <typename T>
PrimitiveCase<T> make_primitive_case(LayerOp op, Rng& rng) {
  auto pick = [&](int lo, int hi) { return static_cast<int>(rng.uniform_int(lo, hi)); };
  const int n = pick(2, 3);
  int c = pick(1, 3);
  int h = pick(2, 8);
  int w = pick(2, 8);
  LayerKind kind;
  switch (op) {
    case LayerOp::conv2d:
    case LayerOp::separable_conv2d: {
      const int k = pick(1, 3);
      const int s = pick(1, 2);
      const int pad = pick(0, (k - 1) / 2);
      h = std::max(h, k);
      w = std::max(w, k);
      kind = op == LayerOp::conv2d ? LayerKind::conv2d(k, s, pad, c, pick(1, 3), rng.uniform() < 0.5)
                                   : LayerKind::separable_conv2d(k, s, pad, c, pick(1, 3), rng.uniform() < 0.5);
      break;
    }
    case LayerOp::maxpool2d: {
      const int k = pick(2, 3);
      kind = LayerKind::maxpool2d(k, pick(1, 2), pick(0, (k - 1) / 2));
      h = std::max(h, k);
      w = std::max(w, k);
      break;
    }
    case LayerOp::batchnorm2d: kind = LayerKind::batchnorm2d(c); break;
    case LayerOp::relu: kind = LayerKind::relu(); break;
    case LayerOp::leaky_relu: kind = LayerKind::leaky_relu(); break;
    case LayerOp::sigmoid: kind = LayerKind::sigmoid(); break;
    case LayerOp::residual_add: kind = LayerKind::residual_add(); break;
    case LayerOp::pointwise_conv: kind = LayerKind::pointwise_conv(c, pick(1, 3), true); break;
    case LayerOp::upsample_nearest:
      kind = LayerKind::upsample_nearest(2);
      h = std::min(h, 4);
      w = std::min(w, 4);
      break;
    case LayerOp::dense: kind = LayerKind::dense(c * h * w, pick(1, 2), pick(1, 3), pick(1, 3)); break;
  }

  PrimitiveCase<T> pc{kind.describe(), Graph<T>(static_cast<std::size_t>(c)), Tensor<T>(), true};
  if (op == LayerOp::residual_add) {
    // Second operand comes through a parameterized branch so both input slots
    // carry a non-trivial gradient.
    pc.graph.add("branch", LayerKind::pointwise_conv(c, c, true));
    pc.graph.add("add", kind, {Graph<T>::kInput, 0});
  } else {
    pc.graph.add("op", kind);
  }
  pc.graph.initialize(rng.next_u64());
  // Non-trivial affine terms for normalization layers.
  for (auto& p : pc.graph.parameters())
    if (p.name.find("bias") != std::string::npos || p.name.find("weight") != std::string::npos)
      if (op == LayerOp::batchnorm2d)
        for (auto& v : p.tensor->values()) v = static_cast<T>(rng.uniform(0.5, 1.5));

  Shape shape{std::size_t(n), std::size_t(c), std::size_t(h), std::size_t(w)};
  pc.input = Tensor<T>(shape);
  if (op == LayerOp::maxpool2d) {
    // Distinct values 0.05 apart in random order: no near-ties.
    std::vector<std::size_t> order(pc.input.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(std::span<std::size_t>(order));
    for (std::size_t i = 0; i < order.size(); ++i) pc.input[i] = static_cast<T>(0.05 * double(order[i]) - 1.0);
  } else {
    for (auto& v : pc.input.values()) {
      double x = rng.uniform(-1.0, 1.0);
      if (std::abs(x) < 0.05) x = x < 0 ? -0.05 - rng.uniform(0, 0.5) : 0.05 + rng.uniform(0, 0.5);
      v = static_cast<T>(x);
    }
  }
  return pc;
}

}  // namespace pf
