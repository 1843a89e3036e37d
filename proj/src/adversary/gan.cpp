#include "pf/adversary/gan.hpp"

#include <cmath>

#include "pf/diffcore/ops.hpp"
#include "pf/diffcore/parallel.hpp"
#include "pf/forensics/checkpoint.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf {

namespace {

constexpr double kCollapseVariance = 1e-4;
constexpr int kCollapseEvery = 100;

struct BceResult {
  double loss = 0.0;
  Tensor<float> grad;
};

// Mean binary cross entropy of logits against a constant target, in the
// overflow-free form max(l, 0) - l t + log(1 + exp(-|l|)).
BceResult bce_with_logits(const Tensor<float>& logits, double target, double weight = 1.0) {
  BceResult r;
  r.grad = Tensor<float>(logits.shape());
  const double n = double(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits[i];
    r.loss += std::max(l, 0.0) - l * target + std::log1p(std::exp(-std::abs(l)));
    const double s = l >= 0 ? 1 / (1 + std::exp(-l)) : std::exp(l) / (1 + std::exp(l));
    r.grad[i] = static_cast<float>(weight * (s - target) / n);
  }
  r.loss /= n;
  return r;
}

Tensor<float> random_real_batch(const ImageSet& real, std::size_t batch, Rng& rng) {
  std::vector<std::size_t> idx(batch);
  for (auto& i : idx) i = static_cast<std::size_t>(rng.uniform_int(0, long(real.size()) - 1));
  return make_batch(real, idx, AugmentMode::none, rng);
}

// Clears and later restores requires_grad on every parameter of a graph.
class NoGrad {
 public:
  explicit NoGrad(Graph<float>& g) : g_(g) {
    for (auto& p : g_.parameters()) flags_.push_back(p.tensor->requires_grad());
    g_.set_requires_grad(false);
  }
  ~NoGrad() {
    auto params = g_.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) params[i].tensor->set_requires_grad(flags_[i]);
  }

 private:
  Graph<float>& g_;
  std::vector<bool> flags_;
};

GanTrace run_gan(AdversaryBundle& b, const ImageSet& real, const EvasionConfig& cfg, Classifier* classifier) {
  if (real.size() == 0) throw DataError("GAN training needs real images");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.lr <= 0) throw ConfigError("invalid adversary step budget or rate");
  if (real.native != b.image_size) throw StructuralError("real images do not match the generator size");
  const AdamOptions opts{.lr = cfg.lr, .beta1 = cfg.beta1};
  Adam<float> opt_g(opts), opt_d(opts);
  Rng rng(cfg.seed);
  Graph<float>& G = b.generator;
  Graph<float>& D = b.discriminator;
  G.set_training(true);
  D.set_training(true);
  const bool evade = classifier && cfg.real_weight != 0.0;
  const std::vector<int> real_labels(cfg.batch, kReal);

  GanTrace trace;
  for (int step = 1; step <= cfg.steps; ++step) {
    // Discriminator: real -> 1, generated -> 0.
    const Tensor<float> xr = random_real_batch(real, cfg.batch, rng);
    const Tensor<float> xf = G.forward(sample_latents(cfg.batch, b.latent_dim, rng));
    D.zero_grad();
    const auto lr_ = bce_with_logits(D.forward(xr), 1.0);
    D.backward(lr_.grad);
    const auto lf = bce_with_logits(D.forward(xf), 0.0);
    D.backward(lf.grad);
    opt_d.step(D.parameters());

    // Generator: non-saturating loss, plus the classifier's real-class NLL.
    const Tensor<float>& x = G.forward(sample_latents(cfg.batch, b.latent_dim, rng));
    const auto lg = bce_with_logits(D.forward(x), 1.0, cfg.gan_weight);
    Tensor<float> dx = D.backward(lg.grad);
    double real_loss = 0.0;
    if (evade) {
      auto ce = location_cross_entropy(classifier->graph.forward(x), real_labels);
      real_loss = ce.loss;
      for (auto& v : ce.grad.values()) v = static_cast<float>(v * cfg.real_weight);
      const Tensor<float> dxc = classifier->graph.backward(ce.grad);
      for (const auto& p : classifier->graph.parameters())
        if (p.tensor->has_grad()) throw ContractError("classifier parameter '" + p.name + "' received a gradient");
      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dxc[i];
    }
    G.zero_grad();
    G.backward(dx);
    opt_g.step(G.parameters());

    trace.d_loss.push_back(lr_.loss + lf.loss);
    trace.g_loss.push_back(lg.loss);
    trace.real_loss.push_back(real_loss);
    if (!std::isfinite(trace.d_loss.back()) || !std::isfinite(trace.g_loss.back()))
      throw NumericError("GAN loss became non-finite at step " + std::to_string(step));
    if (step % kCollapseEvery == 0 || step == cfg.steps) {
      const double var = sample_variance(b, 16, 0xC011A5E);
      if (var < kCollapseVariance)
        trace.events.push_back("step " + std::to_string(step) + ": mode collapse suspected, sample variance " +
                               std::to_string(var));
    }
  }
  return trace;
}

}  // namespace

Graph<float> build_generator(std::size_t latent_dim, std::size_t image_size, std::size_t width) {
  if (image_size % 8 != 0 || image_size < 8) throw ConfigError("generator image size must be a multiple of 8");
  if (latent_dim == 0 || width < 4) throw ConfigError("invalid generator latent dim or width");
  const int s0 = int(image_size / 8), w = int(width);
  Graph<float> g(latent_dim, 1, 1);
  g.add("fc", LayerKind::dense(int(latent_dim), w, s0, s0));
  g.add("fc.act", LayerKind::leaky_relu());
  const int chans[] = {w, w / 2, w / 4, 3};
  for (int s = 0; s < 3; ++s) {
    const std::string p = "up" + std::to_string(s + 1);
    g.add(p, LayerKind::upsample_nearest(2));
    g.add(p + ".conv", LayerKind::conv2d(3, 1, 1, chans[s], chans[s + 1], true));
    g.add(p + ".act", s < 2 ? LayerKind::leaky_relu() : LayerKind::sigmoid());
  }
  return g;
}

Graph<float> build_discriminator(std::size_t image_size, std::size_t width) {
  if (image_size % 8 != 0 || image_size < 8) throw ConfigError("discriminator image size must be a multiple of 8");
  const int w = int(width);
  Graph<float> g(3, image_size, image_size);
  const int chans[] = {3, w / 2, w, 2 * w};
  for (int s = 0; s < 3; ++s) {
    const std::string p = "down" + std::to_string(s + 1);
    g.add(p, LayerKind::conv2d(3, 2, 1, chans[s], chans[s + 1], true));
    g.add(p + ".act", LayerKind::leaky_relu());
  }
  const int s3 = int(image_size / 8);
  g.add("fc", LayerKind::dense(2 * w * s3 * s3, 1, 1, 1));
  return g;
}

AdversaryBundle make_adversary(std::size_t latent_dim, std::size_t image_size, std::size_t width, std::uint64_t seed) {
  AdversaryBundle b{build_generator(latent_dim, image_size, width), build_discriminator(image_size, width),
                    latent_dim, image_size, width};
  b.generator.initialize(mix_seed(seed, 1));
  b.discriminator.initialize(mix_seed(seed, 2));
  b.generator.set_requires_grad(true);
  b.discriminator.set_requires_grad(true);
  return b;
}

Tensor<float> sample_latents(std::size_t n, std::size_t dim, Rng& rng) {
  Tensor<float> z({n, dim, 1, 1});
  for (auto& v : z.values()) v = static_cast<float>(rng.normal());
  return z;
}

Tensor<float> generate(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  const bool was = bundle.generator.training();
  bundle.generator.set_training(false);
  Tensor<float> out = bundle.generator.forward(sample_latents(n, bundle.latent_dim, rng));
  bundle.generator.set_training(was);
  return out;
}

ImageSet generated_image_set(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed, int label) {
  ImageSet set;
  set.native = bundle.image_size;
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < n; b += kChunk) {
    const std::size_t m = std::min(kChunk, n - b);
    const Tensor<float> x = generate(bundle, m, mix_seed(seed, b));
    for (std::size_t i = 0; i < m; ++i) {
      set.images.push_back(image_from_tensor(x, i));
      set.labels.push_back(label);
    }
  }
  return set;
}

void GanConfig::validate() const {
  if (steps < 0 || batch < 1 || lr <= 0 || latent_dim == 0) throw ConfigError("invalid GAN config");
  if (image_size % 8 != 0 || image_size < 8) throw ConfigError("GAN image size must be a multiple of 8");
}

GanResult gan_train(const ImageSet& real, const GanConfig& cfg) {
  cfg.validate();
  GanResult r{make_adversary(cfg.latent_dim, cfg.image_size, cfg.width, cfg.seed), {}};
  const EvasionConfig run{.gan_weight = 1.0,
                          .real_weight = 0.0,
                          .steps = cfg.steps,
                          .batch = cfg.batch,
                          .lr = cfg.lr,
                          .beta1 = cfg.beta1,
                          .seed = mix_seed(cfg.seed, 3)};
  r.trace = run_gan(r.bundle, real, run, nullptr);
  return r;
}

GanTrace gan_continue(AdversaryBundle& bundle, const ImageSet& real, const EvasionConfig& cfg) {
  return run_gan(bundle, real, cfg, nullptr);
}

GanTrace evasion_finetune(AdversaryBundle& bundle, const ImageSet& real, Classifier& classifier,
                          const EvasionConfig& cfg) {
  if (classifier.native != bundle.image_size) throw StructuralError("classifier input size differs from G output");
  const std::uint64_t before = state_hash(classifier.graph.state());
  GanTrace trace;
  {
    NoGrad frozen(classifier.graph);
    const bool was = classifier.graph.training();
    classifier.graph.set_training(false);  // running statistics stay fixed too
    trace = run_gan(bundle, real, cfg, &classifier);
    classifier.graph.set_training(was);
  }
  if (state_hash(classifier.graph.state()) != before)
    throw ContractError("classifier state changed during evasion finetuning");
  return trace;
}

double discriminator_accuracy(AdversaryBundle& bundle, const ImageSet& real, std::uint64_t seed) {
  if (real.size() == 0) throw DataError("discriminator accuracy needs real images");
  Graph<float>& D = bundle.discriminator;
  const bool was = D.training();
  D.set_training(false);
  std::size_t correct = 0;
  Rng unused(0);
  constexpr std::size_t kChunk = 64;
  for (std::size_t b = 0; b < real.size(); b += kChunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(real.size(), b + kChunk); ++i) idx.push_back(i);
    const auto& y = D.forward(make_batch(real, idx, AugmentMode::none, unused));
    for (std::size_t i = 0; i < y.size(); ++i) correct += y[i] > 0.f;
  }
  for (std::size_t b = 0; b < real.size(); b += kChunk) {
    const std::size_t m = std::min(kChunk, real.size() - b);
    const auto& y = D.forward(generate(bundle, m, mix_seed(seed, b)));
    for (std::size_t i = 0; i < y.size(); ++i) correct += y[i] <= 0.f;
  }
  D.set_training(was);
  return double(correct) / double(2 * real.size());
}

double sample_variance(AdversaryBundle& bundle, std::size_t n, std::uint64_t seed) {
  const Tensor<float> x = generate(bundle, n, seed);
  const std::size_t per = x.size() / n;
  double total = 0;
  for (std::size_t k = 0; k < per; ++k) {
    double s = 0, ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double v = x[i * per + k];
      s += v;
      ss += v * v;
    }
    const double mean = s / double(n);
    total += ss / double(n) - mean * mean;
  }
  return total / double(per);
}

Reprojection reproject(Graph<float>& generator, const ImageBuffer& target, const ReprojectConfig& cfg,
                       const std::vector<double>* init) {
  if (cfg.steps < 0 || cfg.restarts < 1 || cfg.lr <= 0) throw ConfigError("invalid reprojection config");
  const std::size_t dim = generator.layer_kinds().front().in_ch;
  if (init && init->size() != dim) throw StructuralError("initial latent has the wrong dimension");
  NoGrad frozen(generator);
  const bool was = generator.training();
  generator.set_training(false);

  Tensor<float> t({1, target.channels, target.height, target.width});
  copy_to_tensor(target, t, 0);
  Reprojection best;
  best.loss = std::numeric_limits<double>::infinity();
  // Without optimization steps, restarts would only pick among prior draws.
  const int restarts = cfg.steps == 0 ? 1 : cfg.restarts;
  for (int r = 0; r < restarts; ++r) {
    std::vector<double> z(dim);
    if (r == 0 && init) {
      z = *init;
    } else {
      Rng rng(mix_seed(cfg.seed, std::uint64_t(r)));
      for (auto& v : z) v = rng.normal();
    }
    Adam<double> opt(AdamOptions{.lr = cfg.lr});
    std::vector<double> gz(dim);
    for (int s = 0;; ++s) {
      Tensor<float> zt({1, dim, 1, 1});
      for (std::size_t d = 0; d < dim; ++d) zt[d] = static_cast<float>(z[d]);
      const Tensor<float>& x = generator.forward(zt);
      if (x.shape() != t.shape()) throw StructuralError("target does not match the generator output size");
      double loss = 0;
      Tensor<float> gx(x.shape());
      const double n = double(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double diff = double(x[i]) - double(t[i]);
        loss += std::abs(diff);
        gx[i] = static_cast<float>((diff > 0) - (diff < 0)) / static_cast<float>(n);
      }
      loss /= n;
      if (loss < best.loss) {
        best.loss = loss;
        best.z = z;
        best.reconstruction = image_from_tensor(x, 0);
      }
      best.trace.push_back(best.loss);
      if (s == cfg.steps) break;
      const Tensor<float> dz = generator.backward(gx);
      for (std::size_t d = 0; d < dim; ++d) gz[d] = dz[d];
      opt.step({&z}, {&gz});
    }
  }
  generator.set_training(was);
  return best;
}

DatasetManifest build_reprojection_manifest(AdversaryBundle& bundle, const DatasetManifest& real,
                                            const ReprojectConfig& cfg, const std::filesystem::path& out_dir) {
  std::vector<const ImageRecord*> sources;
  for (const auto& r : real.records)
    if (r.label == kReal) sources.push_back(&r);
  if (sources.empty()) throw DataError("reprojection manifest needs real records");
  namespace fs = std::filesystem;
  for (const char* sub : {"real", "reproj", "seg"}) fs::create_directories(out_dir / sub);

  std::vector<Reprojection> results(sources.size());
  parallel_for(sources.size(), [&](std::size_t i) {
    Graph<float> g = bundle.generator.clone();
    ImageBuffer target = load_record_image(real, *sources[i]);
    if (target.width != bundle.image_size || target.height != bundle.image_size)
      target = lanczos_resize(target, bundle.image_size, bundle.image_size);
    ReprojectConfig c = cfg;
    c.seed = mix_seed(cfg.seed, i);
    results[i] = reproject(g, target, c);
  });

  DatasetManifest m;
  m.root = out_dir;
  for (std::size_t i = 0; i < sources.size(); ++i) {
    char id[16];
    std::snprintf(id, sizeof id, "%05zu", i);
    ImageRecord r = *sources[i];
    r.path = std::string("real/") + id + ".png";
    fs::copy_file(real.resolve(sources[i]->path), out_dir / r.path, fs::copy_options::overwrite_existing);
    r.mask_path.clear();
    if (!sources[i]->segmentation_path.empty()) {
      r.segmentation_path = std::string("seg/") + id + ".png";
      fs::copy_file(real.resolve(sources[i]->segmentation_path), out_dir / r.segmentation_path,
                    fs::copy_options::overwrite_existing);
    }
    if (r.pair_id.empty()) r.pair_id = std::string("reproj/") + id;
    ImageRecord f = r;
    f.label = kFake;
    f.path = std::string("reproj/") + id + ".png";
    f.generator = "reprojection";
    write_png(results[i].reconstruction, out_dir / f.path);
    m.records.push_back(r);
    m.records.push_back(f);
  }
  m.validate(true);
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

void save_adversary(const AdversaryBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const nlohmann::json meta{{"latent_dim", b.latent_dim}, {"image_size", b.image_size}, {"width", b.width}};
  save_checkpoint({"generator", b.generator.state(), meta}, dir / "generator.ckpt");
  save_checkpoint({"discriminator", b.discriminator.state(), meta}, dir / "discriminator.ckpt");
}

AdversaryBundle load_adversary(const std::filesystem::path& dir) {
  const Checkpoint g = load_checkpoint(dir / "generator.ckpt");
  const Checkpoint d = load_checkpoint(dir / "discriminator.ckpt");
  if (g.model != "generator" || d.model != "discriminator")
    throw DataError("checkpoints in " + dir.string() + " are not an adversary pair");
  AdversaryBundle b = make_adversary(g.meta.at("latent_dim"), g.meta.at("image_size"), g.meta.at("width"), 0);
  b.generator.load_state(g.state);
  b.discriminator.load_state(d.state);
  return b;
}

}  // namespace pf
