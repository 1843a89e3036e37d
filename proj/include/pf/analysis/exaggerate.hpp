#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pf/forensics/classifier.hpp"

namespace pf {

struct ExaggerateConfig {
  double lambda = 1.0;    // weight of the perceptual term
  int steps = 200;
  std::size_t batch = 64;  // latents per step: batch/2 draws plus their negations
  double lr = 0.01;
  std::uint64_t seed = 0;
};

struct LatentShift {
  std::vector<double> w;
  double lambda = 1.0;
  std::vector<double> trace;  // objective at w = 0 and after each accepted step
};

// Monte Carlo objective over a latent batch z (batch x dim, row-major) at shift
// w. Returns the batch mean and writes d/dw into grad_w.
using ShiftObjective = std::function<double(std::span<const double> z, std::size_t batch, std::span<const double> w,
                                            std::span<double> grad_w)>;

// Adam descent on w from 0 over one fixed antithetic standard-normal batch.
// A step that raises the objective is rejected and the rate halved.
LatentShift exaggerate(const ShiftObjective& objective, std::size_t dim, const ExaggerateConfig& cfg);

// One-dimensional quadratic: G(z) = z, L_fake(x) = (x - 1)^2 and a perceptual
// term lambda * (x - z)^2 with x = z - w. The minimizer is -1 / (1 + lambda)
// when E[z] = 0.
ShiftObjective quadratic_shift_objective(double lambda);

// L_fake = fake-class NLL of the classifier on G(z - w); the perceptual term
// is lambda times the mean squared difference of the classifier's penultimate
// features on G(z) and G(z - w). G takes (N, dim, 1, 1) latents and must
// produce images of the classifier's native size. Both graphs are run in
// evaluation mode and their parameters receive no updates.
ShiftObjective generator_shift_objective(Graph<float>& generator, Classifier& classifier, double lambda);

// Generator samples at z - sign * w (sign +1 exaggerates, -1 attenuates).
Tensor<float> shifted_samples(Graph<float>& generator, std::span<const double> z, std::size_t batch,
                              std::span<const double> w, double sign);

}  // namespace pf
