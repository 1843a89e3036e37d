#include "pf/analysis/exaggerate.hpp"

#include <cmath>

#include "pf/diffcore/adam.hpp"
#include "pf/diffcore/ops.hpp"
#include "pf/diffcore/rng.hpp"

namespace pf {

namespace {

// Antithetic standard-normal batch: rows b and b + batch/2 are negations, so
// the sample mean is exactly zero.
std::vector<double> latent_batch(std::size_t batch, std::size_t dim, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> z(batch * dim);
  const std::size_t half = batch / 2;
  for (std::size_t b = 0; b < half; ++b)
    for (std::size_t d = 0; d < dim; ++d) {
      const double v = rng.normal();
      z[b * dim + d] = v;
      z[(b + half) * dim + d] = -v;
    }
  if (batch % 2)
    for (std::size_t d = 0; d < dim; ++d) z[(batch - 1) * dim + d] = 0.0;
  return z;
}

Tensor<float> latent_tensor(std::span<const double> z, std::size_t batch, std::span<const double> w, double sign) {
  const std::size_t dim = w.size();
  Tensor<float> t({batch, dim, 1, 1});
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t d = 0; d < dim; ++d) t[b * dim + d] = static_cast<float>(z[b * dim + d] - sign * w[d]);
  return t;
}

// Restores requires_grad flags on scope exit.
class FrozenParams {
 public:
  explicit FrozenParams(Graph<float>& g) : g_(g) {
    for (auto& p : g_.parameters()) flags_.push_back(p.tensor->requires_grad());
    g_.set_requires_grad(false);
  }
  ~FrozenParams() {
    auto params = g_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->set_requires_grad(flags_[i]);
  }

 private:
  Graph<float>& g_;
  std::vector<bool> flags_;
};

}  // namespace

LatentShift exaggerate(const ShiftObjective& objective, std::size_t dim, const ExaggerateConfig& cfg) {
  if (cfg.lambda < 0) throw ConfigError("exaggerate: lambda must be >= 0");
  if (cfg.batch < 2 || dim == 0 || cfg.steps < 0 || cfg.lr <= 0) throw ConfigError("exaggerate: invalid config");
  LatentShift out;
  out.lambda = cfg.lambda;
  out.w.assign(dim, 0.0);
  if (cfg.steps == 0) return out;

  // One fixed batch makes the objective deterministic, so iterates can be
  // compared: a proposal that raises it is rejected and the rate halved.
  const auto z = latent_batch(cfg.batch, dim, cfg.seed);
  std::vector<double> grad(dim), grad_new(dim);
  double f = objective(z, cfg.batch, out.w, grad);
  auto check = [&](double v, int step) {
    if (!std::isfinite(v))
      throw NumericError("exaggerate: non-finite objective at step " + std::to_string(step) + " after " +
                         std::to_string(out.trace.size()) + " accepted iterates" +
                         (out.trace.empty() ? std::string() : ", last " + std::to_string(out.trace.back())));
  };
  check(f, 0);
  out.trace.push_back(f);

  Adam<double> adam(AdamOptions{.lr = cfg.lr});
  std::vector<double> proposal;
  for (int step = 1; step <= cfg.steps; ++step) {
    proposal = out.w;
    adam.step({&proposal}, {&grad});
    const double f_new = objective(z, cfg.batch, proposal, grad_new);
    check(f_new, step);
    if (f_new <= f) {
      out.w.swap(proposal);
      grad.swap(grad_new);
      f = f_new;
      out.trace.push_back(f);
    } else {
      adam.set_lr(adam.options().lr / 2);
    }
  }
  return out;
}

ShiftObjective quadratic_shift_objective(double lambda) {
  return [lambda](std::span<const double> z, std::size_t batch, std::span<const double> w, std::span<double> g) {
    double f = 0, d = 0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double x = z[b] - w[0];
      f += (x - 1) * (x - 1) + lambda * (x - z[b]) * (x - z[b]);
      d += -2 * (x - 1) - 2 * lambda * (x - z[b]);
    }
    g[0] = d / double(batch);
    return f / double(batch);
  };
}

Tensor<float> shifted_samples(Graph<float>& generator, std::span<const double> z, std::size_t batch,
                              std::span<const double> w, double sign) {
  generator.set_training(false);
  return generator.forward(latent_tensor(z, batch, w, sign));
}

ShiftObjective generator_shift_objective(Graph<float>& generator, Classifier& classifier, double lambda) {
  const auto plan = backbone_plan(classifier.spec);
  const int features = plan.back().inputs.at(0);
  const int head = static_cast<int>(plan.size()) - 1;
  return [&generator, &classifier, lambda, features, head](std::span<const double> z, std::size_t batch,
                                                           std::span<const double> w, std::span<double> g) {
    FrozenParams freeze_g(generator), freeze_c(classifier.graph);
    generator.set_training(false);
    classifier.graph.set_training(false);
    const std::vector<double> zero(w.size(), 0.0);

    const Tensor<float> x0 = generator.forward(latent_tensor(z, batch, zero, 1.0));
    classifier.graph.forward(x0);
    const Tensor<float> phi0 = classifier.graph.activation(features);

    const Tensor<float> x1 = generator.forward(latent_tensor(z, batch, w, 1.0));
    const Tensor<float>& logits = classifier.graph.forward(x1);
    const std::vector<int> labels(batch, kFake);
    const auto ce = location_cross_entropy(logits, labels);
    const Tensor<float>& phi1 = classifier.graph.activation(features);
    Tensor<float> dphi(phi1.shape());
    double lp = 0;
    const double scale = lambda / double(phi1.size());
    for (std::size_t i = 0; i < phi1.size(); ++i) {
      const double diff = double(phi1[i]) - double(phi0[i]);
      lp += diff * diff;
      dphi[i] = static_cast<float>(2 * scale * diff);
    }
    const Tensor<float> dx = classifier.graph.backward({{head, &ce.grad}, {features, &dphi}});
    const Tensor<float> dlatent = generator.backward(dx);
    const std::size_t dim = w.size();
    for (std::size_t d = 0; d < dim; ++d) {
      double s = 0;
      for (std::size_t b = 0; b < batch; ++b) s += dlatent[b * dim + d];
      g[d] = -s;  // latent is z - w
    }
    return ce.loss + scale * lp;
  };
}

}  // namespace pf
