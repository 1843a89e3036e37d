#include "pf/diffcore/adam.hpp"

#include <cmath>

namespace pf {

template <typename T>
void Adam<T>::update(T* p, const T* g, std::size_t n, std::size_t slot, double c1, double c2) {
  if (slot >= m_.size()) {
    m_.emplace_back(n, 0.0);
    v_.emplace_back(n, 0.0);
  }
  auto& m = m_[slot];
  auto& v = v_[slot];
  if (m.size() != n) throw StructuralError("Adam moment shape no longer matches parameter " + std::to_string(slot));
  for (std::size_t i = 0; i < n; ++i) {
    const double gi = g[i];
    m[i] = opts_.beta1 * m[i] + (1 - opts_.beta1) * gi;
    v[i] = opts_.beta2 * v[i] + (1 - opts_.beta2) * gi * gi;
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] = static_cast<T>(p[i] - opts_.lr * mhat / (std::sqrt(vhat) + opts_.eps));
  }
}

template <typename T>
void Adam<T>::step(const std::vector<NamedTensor<T>>& params) {
  ++t_;
  const double c1 = 1 - std::pow(opts_.beta1, double(t_));
  const double c2 = 1 - std::pow(opts_.beta2, double(t_));
  std::size_t slot = 0;
  for (const auto& p : params) {
    if (!p.tensor->requires_grad()) continue;
    if (!p.tensor->has_grad()) throw StructuralError("parameter '" + p.name + "' has no gradient buffer");
    update(p.tensor->data(), p.tensor->grad().data(), p.tensor->size(), slot++, c1, c2);
  }
}

template <typename T>
void Adam<T>::step(std::vector<std::vector<T>*> values, const std::vector<const std::vector<T>*>& grads) {
  if (values.size() != grads.size()) throw StructuralError("Adam: value/gradient count mismatch");
  ++t_;
  const double c1 = 1 - std::pow(opts_.beta1, double(t_));
  const double c2 = 1 - std::pow(opts_.beta2, double(t_));
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i]->size() != grads[i]->size()) throw StructuralError("Adam: gradient shape mismatch");
    update(values[i]->data(), grads[i]->data(), values[i]->size(), i, c1, c2);
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace pf
