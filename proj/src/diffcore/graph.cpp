#include "pf/diffcore/graph.hpp"

namespace pf {

template <typename T>
Graph<T>::Graph(std::size_t in_channels, std::size_t in_height, std::size_t in_width)
    : in_c_(in_channels), in_h_(in_height), in_w_(in_width) {}

template <typename T>
int Graph<T>::add(std::string name, const LayerKind& kind, std::vector<int> inputs) {
  auto layer = make_layer<T>(kind);
  if (inputs.size() != layer->arity())
    throw StructuralError("node '" + name + "' takes " + std::to_string(layer->arity()) + " inputs, got " +
                          std::to_string(inputs.size()));
  for (int i : inputs)
    if (i < kInput || i >= static_cast<int>(nodes_.size()))
      throw StructuralError("node '" + name + "' references a node that does not precede it");
  for (const auto& n : nodes_)
    if (n.name == name) throw StructuralError("duplicate node name '" + name + "'");
  nodes_.push_back({std::move(name), std::move(layer), std::move(inputs)});
  forwarded_ = false;
  return last();
}

template <typename T>
int Graph<T>::add(std::string name, const LayerKind& kind) {
  return add(std::move(name), kind, {last()});
}

template <typename T>
std::vector<LayerKind> Graph<T>::layer_kinds() const {
  std::vector<LayerKind> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.layer->kind());
  return out;
}

template <typename T>
void Graph<T>::initialize(std::uint64_t seed) {
  Rng rng(seed);
  for (auto& n : nodes_) {
    n.layer->initialize(rng);
    // Buffers (normalization statistics) restart from their defaults.
    for (auto& b : n.layer->buffers())
      b.tensor->fill(b.name == "running_var" ? T(1) : T(0));
  }
  zero_grad();
}

template <typename T>
void Graph<T>::check_input(const Tensor<T>& input) const {
  const auto& s = input.shape();
  const bool ok = s.size() == 4 && s[1] == in_c_ && (in_h_ == 0 || s[2] == in_h_) && (in_w_ == 0 || s[3] == in_w_);
  if (!ok)
    throw StructuralError("graph input " + shape_str(s) + " does not match declared (N, " + std::to_string(in_c_) +
                          ", " + (in_h_ ? std::to_string(in_h_) : "*") + ", " +
                          (in_w_ ? std::to_string(in_w_) : "*") + ")");
}

template <typename T>
Shape Graph<T>::output_shape(const Shape& input) const {
  std::vector<Shape> shapes;
  shapes.reserve(nodes_.size());
  for (const auto& n : nodes_) {
    std::vector<Shape> in;
    for (int i : n.inputs) in.push_back(i == kInput ? input : shapes[static_cast<std::size_t>(i)]);
    try {
      shapes.push_back(n.layer->output_shape(in));
    } catch (const StructuralError& e) {
      throw StructuralError("node '" + n.name + "': " + e.what());
    }
  }
  return shapes.empty() ? input : shapes.back();
}

template <typename T>
const Tensor<T>& Graph<T>::forward(const Tensor<T>& input) {
  check_input(input);
  input.require_finite("graph input");
  input_ = input;
  acts_.resize(nodes_.size());
  for (std::size_t k = 0; k < nodes_.size(); ++k) {
    auto& n = nodes_[k];
    std::vector<const Tensor<T>*> in;
    std::vector<Shape> in_shapes;
    for (int i : n.inputs) {
      in.push_back(i == kInput ? &input_ : &acts_[static_cast<std::size_t>(i)]);
      in_shapes.push_back(in.back()->shape());
    }
    try {
      n.layer->output_shape(in_shapes);
    } catch (const StructuralError& e) {
      throw StructuralError("node '" + n.name + "': " + e.what());
    }
    n.layer->forward(in, acts_[k], training_);
    acts_[k].require_finite("node '" + n.name + "' output");
  }
  forwarded_ = true;
  return output();
}

template <typename T>
const Tensor<T>& Graph<T>::output() const {
  if (!forwarded_) throw StateError("graph output requested before forward");
  return nodes_.empty() ? input_ : acts_.back();
}

template <typename T>
const Tensor<T>& Graph<T>::activation(int node) const {
  if (!forwarded_) throw StateError("activation requested before forward");
  if (node == kInput) return input_;
  return acts_.at(static_cast<std::size_t>(node));
}

template <typename T>
Tensor<T> Graph<T>::backward(const Tensor<T>& output_grad) {
  return backward(std::vector<Seed>{{last(), &output_grad}});
}

template <typename T>
Tensor<T> Graph<T>::backward(const std::vector<Seed>& seeds) {
  if (!forwarded_) throw StateError("backward called before forward");
  Tensor<T> dinput(input_.shape());
  // Gradient buffers persist across calls; re-zeroing is much cheaper than
  // faulting in fresh pages.
  std::vector<Tensor<T>>& grads = grads_;
  grads.resize(nodes_.size());
  std::vector<bool> live(nodes_.size(), false);

  auto grad_slot = [&](int i) -> Tensor<T>& {
    if (i == kInput) return dinput;
    auto k = static_cast<std::size_t>(i);
    if (!live[k]) {
      if (grads[k].shape() == acts_[k].shape())
        grads[k].fill(T(0));
      else
        grads[k] = Tensor<T>(acts_[k].shape());
      live[k] = true;
    }
    return grads[k];
  };

  for (const auto& s : seeds) {
    const Tensor<T>& ref = s.node == kInput ? input_ : acts_.at(static_cast<std::size_t>(s.node));
    if (s.grad->shape() != ref.shape())
      throw StructuralError("output gradient " + shape_str(s.grad->shape()) + " does not match " +
                            shape_str(ref.shape()));
    Tensor<T>& g = grad_slot(s.node);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += (*s.grad)[i];
  }

  for (std::size_t k = nodes_.size(); k-- > 0;) {
    if (!live[k]) continue;
    auto& n = nodes_[k];
    std::vector<const Tensor<T>*> in;
    std::vector<Tensor<T>*> din;
    for (int i : n.inputs) {
      in.push_back(i == kInput ? &input_ : &acts_[static_cast<std::size_t>(i)]);
      din.push_back(&grad_slot(i));
    }
    n.layer->backward(in, acts_[k], grads[k], din);
  }
  return dinput;
}

template <typename T>
std::vector<NamedTensor<T>> Graph<T>::parameters() {
  std::vector<NamedTensor<T>> out;
  for (auto& n : nodes_)
    for (auto& p : n.layer->parameters()) out.push_back({n.name + "." + p.name, p.tensor});
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Graph<T>::buffers() {
  std::vector<NamedTensor<T>> out;
  for (auto& n : nodes_)
    for (auto& p : n.layer->buffers()) out.push_back({n.name + "." + p.name, p.tensor});
  return out;
}

template <typename T>
std::size_t Graph<T>::param_count() const {
  std::size_t total = 0;
  for (const auto& n : nodes_)
    for (auto& p : n.layer->parameters()) total += p.tensor->size();
  return total;
}

template <typename T>
void Graph<T>::zero_grad() {
  for (auto& p : parameters()) p.tensor->zero_grad();
}

template <typename T>
void Graph<T>::set_requires_grad(bool on) {
  for (auto& p : parameters()) p.tensor->set_requires_grad(on);
}

template <typename T>
StateDict<T> Graph<T>::state() const {
  StateDict<T> out;
  auto& self = const_cast<Graph&>(*this);
  for (auto& p : self.parameters()) {
    Tensor<T> copy(p.tensor->shape(), std::vector<T>(p.tensor->values().begin(), p.tensor->values().end()));
    out.emplace_back(p.name, std::move(copy));
  }
  for (auto& b : self.buffers()) {
    Tensor<T> copy(b.tensor->shape(), std::vector<T>(b.tensor->values().begin(), b.tensor->values().end()));
    out.emplace_back(b.name, std::move(copy));
  }
  return out;
}

template <typename T>
void Graph<T>::load_state(const StateDict<T>& state) {
  auto assign = [&](NamedTensor<T>& dst) {
    for (const auto& [name, t] : state) {
      if (name != dst.name) continue;
      if (t.shape() != dst.tensor->shape())
        throw StructuralError("state entry '" + name + "' has shape " + shape_str(t.shape()) + ", expected " +
                              shape_str(dst.tensor->shape()));
      std::copy(t.values().begin(), t.values().end(), dst.tensor->values().begin());
      return;
    }
    throw StructuralError("state is missing entry '" + dst.name + "'");
  };
  for (auto& p : parameters()) assign(p);
  for (auto& b : buffers()) assign(b);
  forwarded_ = false;
}

template <typename T>
Graph<T> Graph<T>::clone() const {
  Graph<T> g(in_c_, in_h_, in_w_);
  for (const auto& n : nodes_) g.add(n.name, n.layer->kind(), n.inputs);
  g.load_state(state());
  auto& self = const_cast<Graph&>(*this);
  auto src = self.parameters();
  auto dst = g.parameters();
  for (std::size_t i = 0; i < src.size(); ++i) dst[i].tensor->set_requires_grad(src[i].tensor->requires_grad());
  g.training_ = training_;
  return g;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace pf
