#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "pf/diffcore/layers.hpp"

namespace pf {

template <typename T>
using StateDict = std::vector<std::pair<std::string, Tensor<T>>>;

// A static DAG of primitive applications. Nodes are appended in topological
// order (every input precedes its consumer); forward evaluates them in that
// order and backward visits them in exact reverse.
template <typename T>
class Graph {
 public:
  static constexpr int kInput = -1;

  struct Node {
    std::string name;
    std::unique_ptr<Layer<T>> layer;
    std::vector<int> inputs;
  };

  struct Seed {
    int node;
    const Tensor<T>* grad;
  };

  // Declared per-sample input shape; a zero height/width accepts any size.
  explicit Graph(std::size_t in_channels, std::size_t in_height = 0, std::size_t in_width = 0);
  Graph(Graph&&) noexcept = default;
  Graph& operator=(Graph&&) noexcept = default;

  // Appends a node fed by `inputs` (kInput refers to the graph input).
  int add(std::string name, const LayerKind& kind, std::vector<int> inputs);
  // Appends a node fed by the most recent node (or the graph input).
  int add(std::string name, const LayerKind& kind);

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }
  int last() const noexcept { return static_cast<int>(nodes_.size()) - 1; }
  std::size_t in_channels() const noexcept { return in_c_; }
  std::size_t in_height() const noexcept { return in_h_; }
  std::size_t in_width() const noexcept { return in_w_; }
  std::vector<LayerKind> layer_kinds() const;

  // Re-draws every parameter from `seed` (node order) and resets buffers.
  void initialize(std::uint64_t seed);
  void set_training(bool on) noexcept { training_ = on; }
  bool training() const noexcept { return training_; }

  Shape output_shape(const Shape& input) const;

  // Throws StructuralError naming the node on shape mismatch and NumericError
  // naming the node on NaN/Inf.
  const Tensor<T>& forward(const Tensor<T>& input);
  const Tensor<T>& output() const;
  const Tensor<T>& activation(int node) const;

  // Accumulates parameter gradients and returns d(output . output_grad)/d input.
  Tensor<T> backward(const Tensor<T>& output_grad);
  // Same, with gradients injected at arbitrary nodes (e.g. a feature layer).
  Tensor<T> backward(const std::vector<Seed>& seeds);

  std::vector<NamedTensor<T>> parameters();
  std::vector<NamedTensor<T>> buffers();
  std::size_t param_count() const;
  void zero_grad();
  void set_requires_grad(bool on);

  StateDict<T> state() const;
  void load_state(const StateDict<T>& state);
  Graph clone() const;

 private:
  void check_input(const Tensor<T>& input) const;

  std::size_t in_c_, in_h_, in_w_;
  std::vector<Node> nodes_;
  std::vector<Tensor<T>> acts_;
  std::vector<Tensor<T>> grads_;
  Tensor<T> input_;
  bool training_ = true;
  bool forwarded_ = false;
};

extern template class Graph<float>;
extern template class Graph<double>;

}  // namespace pf
