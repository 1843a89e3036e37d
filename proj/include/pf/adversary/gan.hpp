#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pf/diffcore/adam.hpp"
#include "pf/forensics/classifier.hpp"

namespace pf {

// Decoder G: dense latent -> (width, s/8, s/8), then three nearest x2
// upsample + 3x3 conv stages, leaky ReLU between, sigmoid output in [0, 1].
Graph<float> build_generator(std::size_t latent_dim, std::size_t image_size, std::size_t width);
// Discriminator D: three stride-2 3x3 convs with leaky ReLU, dense to one logit.
Graph<float> build_discriminator(std::size_t image_size, std::size_t width);

struct AdversaryBundle {
  Graph<float> generator{1, 1, 1};
  Graph<float> discriminator{3};
  std::size_t latent_dim = 16;
  std::size_t image_size = 64;
  std::size_t width = 64;
};

AdversaryBundle make_adversary(std::size_t latent_dim, std::size_t image_size, std::size_t width, std::uint64_t seed);

// Standard-normal latents as an (n, dim, 1, 1) tensor.
Tensor<float> sample_latents(std::size_t n, std::size_t dim, Rng& rng);
// Evaluation-mode samples of G; deterministic in `seed`.
Tensor<float> generate(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed);
ImageSet generated_image_set(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed, int label = kFake);

struct GanConfig {
  std::size_t latent_dim = 16;
  std::size_t image_size = 64;
  std::size_t width = 64;
  int steps = 2000;
  std::size_t batch = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
  void validate() const;
};

struct GanTrace {
  std::vector<double> d_loss, g_loss, real_loss;  // one entry per iteration
  std::vector<std::string> events;                // warnings such as mode collapse
};

struct GanResult {
  AdversaryBundle bundle;
  GanTrace trace;
};

// Alternating non-saturating updates, one D step then one G step per
// iteration, from a fresh bundle drawn with cfg.seed.
GanResult gan_train(const ImageSet& real, const GanConfig& cfg);

struct EvasionConfig {
  double gan_weight = 1.0;
  double real_weight = 1.0;
  int steps = 2000;
  std::size_t batch = 32;
  double lr = 2e-4;
  double beta1 = 0.5;
  std::uint64_t seed = 0;
};

// Continues adversarial training; G's loss adds real_weight times the NLL of
// the real class under the frozen classifier. Throws ContractError if the
// classifier would receive gradients or changes. With real_weight 0 this is
// exactly gan_continue.
GanTrace evasion_finetune(AdversaryBundle& bundle, const ImageSet& real, Classifier& classifier,
                          const EvasionConfig& cfg);
GanTrace gan_continue(AdversaryBundle& bundle, const ImageSet& real, const EvasionConfig& cfg);

// Fraction of held-out reals and fresh G samples that D classifies correctly.
double discriminator_accuracy(AdversaryBundle& bundle, const ImageSet& real, std::uint64_t seed);

// Mean per-pixel variance across a probe batch of G samples.
double sample_variance(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed);

struct Reprojection {
  std::vector<double> z;
  ImageBuffer reconstruction;
  double loss = 0.0;          // mean absolute pixel error of the reconstruction
  std::vector<double> trace;  // best-so-far loss over all evaluated iterates
};

struct ReprojectConfig {
  int steps = 500;
  int restarts = 4;
  double lr = 0.05;
  std::uint64_t seed = 0;
};

// Adam on the mean absolute error |x - G(z)| from prior draws; the first
// restart starts at `init` when given.
Reprojection reproject(Graph<float>& generator, const ImageBuffer& target, const ReprojectConfig& cfg,
                       const std::vector<double>* init = nullptr);

// Copies the real records under out_dir and adds one reprojected fake per
// real, sharing its pair id. Targets are reprojected in parallel, each with a
// seed derived from cfg.seed and its index.
DatasetManifest build_reprojection_manifest(AdversaryBundle& bundle, const DatasetManifest& real,
                                            const ReprojectConfig& cfg, const std::filesystem::path& out_dir);

void save_adversary(const AdversaryBundle& bundle, const std::filesystem::path& dir);
AdversaryBundle load_adversary(const std::filesystem::path& dir);

}  // namespace pf
