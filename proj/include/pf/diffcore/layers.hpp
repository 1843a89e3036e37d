#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pf/diffcore/rng.hpp"
#include "pf/diffcore/tensor.hpp"

namespace pf {

enum class LayerOp {
  conv2d,
  separable_conv2d,
  maxpool2d,
  batchnorm2d,
  relu,
  residual_add,
  pointwise_conv,
  // Generator/discriminator extras.
  leaky_relu,
  sigmoid,
  upsample_nearest,
  dense,
};

std::string_view to_string(LayerOp op);
LayerOp layer_op_from_string(std::string_view name);

// Declarative description of one primitive application. Fields not used by an
// op keep their defaults. For upsample_nearest, `stride` is the scale factor;
// for dense, the output is reshaped to out_ch x out_h x out_w.
struct LayerKind {
  LayerOp op = LayerOp::relu;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_ch = 0;
  int out_ch = 0;
  bool bias = false;
  int out_h = 1;
  int out_w = 1;

  static LayerKind conv2d(int k, int s, int pad, int in_ch, int out_ch, bool bias = false);
  static LayerKind separable_conv2d(int k, int s, int pad, int in_ch, int out_ch, bool bias = false);
  static LayerKind maxpool2d(int k, int s, int pad);
  static LayerKind batchnorm2d(int ch);
  static LayerKind relu();
  static LayerKind residual_add();
  static LayerKind pointwise_conv(int in_ch, int out_ch, bool bias = false);
  static LayerKind leaky_relu();
  static LayerKind sigmoid();
  static LayerKind upsample_nearest(int factor);
  static LayerKind dense(int in_features, int out_ch, int out_h, int out_w, bool bias = true);

  // Throws StructuralError when k < 1, s < 1, pad < 0 or a channel count < 1.
  void validate() const;
  std::size_t param_count() const;
  std::string describe() const;

  bool operator==(const LayerKind&) const = default;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

// One primitive. Layers may cache whatever the backward pass needs during
// forward; backward must follow a forward on the same inputs.
template <typename T>
class Layer {
 public:
  explicit Layer(LayerKind kind) : kind_(kind) {}
  virtual ~Layer() = default;
  Layer(const Layer&) = delete;
  Layer& operator=(const Layer&) = delete;

  const LayerKind& kind() const noexcept { return kind_; }
  virtual std::size_t arity() const { return 1; }

  virtual Shape output_shape(const std::vector<Shape>& inputs) const = 0;
  virtual void forward(const std::vector<const Tensor<T>*>& in, Tensor<T>& out, bool training) = 0;
  // Accumulates into din[i]->values() (not ->grad()); entries may be null when
  // the caller does not need that input gradient. Parameter gradients are
  // accumulated only for parameters with requires_grad set.
  virtual void backward(const std::vector<const Tensor<T>*>& in, const Tensor<T>& out,
                        const Tensor<T>& dout, const std::vector<Tensor<T>*>& din) = 0;

  virtual std::vector<NamedTensor<T>> parameters() { return {}; }
  virtual std::vector<NamedTensor<T>> buffers() { return {}; }
  virtual void initialize(Rng& rng) { (void)rng; }

 private:
  LayerKind kind_;
};

template <typename T>
std::unique_ptr<Layer<T>> make_layer(const LayerKind& kind);

// Spatial output length of a k/s/pad window: floor((in + 2 pad - k) / s) + 1.
std::size_t conv_out_size(std::size_t in, int k, int s, int pad);

}  // namespace pf
