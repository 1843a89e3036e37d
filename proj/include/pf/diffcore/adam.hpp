#pragma once

#include <cstdint>
#include <vector>

#include "pf/diffcore/layers.hpp"

namespace pf {

struct AdamOptions {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Bias-corrected Adam. Moments are created on the first step and must keep
// matching the parameter shapes afterwards.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamOptions opts = {}) : opts_(opts) {}

  // Applies one update using each parameter's accumulated grad(). Parameters
  // without requires_grad are skipped.
  void step(const std::vector<NamedTensor<T>>& params);

  // Same update for raw values/gradients (used by latent-space optimizers).
  void step(std::vector<std::vector<T>*> values, const std::vector<const std::vector<T>*>& grads);

  std::int64_t step_count() const noexcept { return t_; }
  const AdamOptions& options() const noexcept { return opts_; }
  void set_lr(double lr) noexcept { opts_.lr = lr; }

 private:
  void update(T* p, const T* g, std::size_t n, std::size_t slot, double c1, double c2);

  AdamOptions opts_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace pf
