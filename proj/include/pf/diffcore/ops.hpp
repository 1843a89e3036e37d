#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "pf/diffcore/tensor.hpp"

namespace pf {

// Softmax along `axis` with max-subtraction.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, std::size_t axis);

// Smallest probability fed to a log in any loss.
inline constexpr double kLogClamp = 1e-12;

template <typename T>
struct LossResult {
  double loss = 0.0;
  Tensor<T> grad;                // d loss / d logits
  std::size_t clamped = 0;       // patches whose target probability hit kLogClamp
};

// Per-location cross entropy on NCHW logits with classes on axis 1. Every
// spatial location of sample n targets class labels[n]; the loss is averaged
// over locations, then over samples (weights, when given, replace 1/N).
template <typename T>
LossResult<T> location_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                     std::span<const double> sample_weights = {});

}  // namespace pf
