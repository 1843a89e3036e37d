#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pf/diffcore/graph.hpp"

namespace pf {

enum class BackboneFamily { xception, resnet, extended_block2 };

// A truncated classifier: the first `truncation` blocks of the family's
// standard architecture followed by a 1x1 convolution to two logits
// (index 0 = real, index 1 = fake) at every output location.
struct BackboneSpec {
  BackboneFamily family = BackboneFamily::xception;
  int truncation = 1;  // xception 1..5; resnet layer 1; extended_block2 is always 2

  // "xception:2", "resnet:1", "extended_block2".
  static BackboneSpec parse(const std::string& text);
  std::string to_string() const;
  // Throws ConfigError on an invalid family/truncation pair.
  void validate() const;
  // Patience multiplier p for early stopping: 50 (xception 1), 20 (xception 2), 10 otherwise.
  int patience_multiplier() const;

  bool operator==(const BackboneSpec&) const = default;
};

struct PlanNode {
  std::string name;
  LayerKind kind;
  std::vector<int> inputs;  // Graph::kInput for the image
};

// Ordered node list (topological); the last node is always the 2-channel head.
std::vector<PlanNode> backbone_plan(const BackboneSpec& spec);

template <typename T>
Graph<T> build_graph(const std::vector<PlanNode>& plan, std::size_t in_channels = 3);

// Builds the classifier and draws its weights deterministically from rng_seed.
template <typename T = float>
Graph<T> build_backbone(const BackboneSpec& spec, std::uint64_t rng_seed);

// Index of the node feeding the head (the penultimate feature map).
int feature_node(const std::vector<PlanNode>& plan);

// Learnable scalars, including the head and normalization affine terms.
template <typename T>
std::size_t param_count(const Graph<T>& graph) {
  return graph.param_count();
}

}  // namespace pf
