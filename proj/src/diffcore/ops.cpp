#include "pf/diffcore/ops.hpp"

#include <algorithm>
#include <cmath>

namespace pf {

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits, std::size_t axis) {
  const auto& s = logits.shape();
  if (axis >= s.size()) throw StructuralError("softmax axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  Tensor<T> out(s);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) {
      const std::size_t base = o * n * inner + i;
      double mx = -INFINITY;
      for (std::size_t c = 0; c < n; ++c) mx = std::max(mx, double(logits[base + c * inner]));
      double z = 0;
      for (std::size_t c = 0; c < n; ++c) z += std::exp(double(logits[base + c * inner]) - mx);
      for (std::size_t c = 0; c < n; ++c)
        out[base + c * inner] = static_cast<T>(std::exp(double(logits[base + c * inner]) - mx) / z);
    }
  }
  return out;
}

template <typename T>
LossResult<T> location_cross_entropy(const Tensor<T>& logits, std::span<const int> labels,
                                     std::span<const double> sample_weights) {
  const auto& s = logits.shape();
  if (s.size() != 4) throw StructuralError("cross entropy expects NCHW logits, got " + shape_str(s));
  const std::size_t N = s[0], C = s[1], HW = s[2] * s[3];
  if (labels.size() != N) throw StructuralError("label count does not match batch size");
  if (!sample_weights.empty() && sample_weights.size() != N)
    throw StructuralError("sample weight count does not match batch size");
  LossResult<T> r;
  r.grad = Tensor<T>(s);
  const Tensor<T> probs = softmax(logits, 1);
  for (std::size_t n = 0; n < N; ++n) {
    const auto t = static_cast<std::size_t>(labels[n]);
    if (t >= C) throw StructuralError("label out of range");
    const double w = sample_weights.empty() ? 1.0 / double(N) : sample_weights[n];
    double sum = 0;
    for (std::size_t p = 0; p < HW; ++p) {
      double pt = probs[(n * C + t) * HW + p];
      if (pt < kLogClamp) {
        pt = kLogClamp;
        ++r.clamped;
      }
      sum -= std::log(pt);
      for (std::size_t c = 0; c < C; ++c) {
        const std::size_t idx = (n * C + c) * HW + p;
        r.grad[idx] = static_cast<T>(w * (double(probs[idx]) - (c == t ? 1.0 : 0.0)) / double(HW));
      }
    }
    r.loss += w * sum / double(HW);
  }
  return r;
}

template Tensor<float> softmax(const Tensor<float>&, std::size_t);
template Tensor<double> softmax(const Tensor<double>&, std::size_t);
template LossResult<float> location_cross_entropy(const Tensor<float>&, std::span<const int>, std::span<const double>);
template LossResult<double> location_cross_entropy(const Tensor<double>&, std::span<const int>,
                                                   std::span<const double>);

}  // namespace pf
