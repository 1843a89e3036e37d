#include <gtest/gtest.h>

#include <set>

#include "pf/adversary/gan.hpp"
#include "pf/forensics/checkpoint.hpp"
#include "pf/pipeline/synth.hpp"
#include "support/temp_dir.hpp"

namespace pf {
namespace {

using testing::TempDir;

ImageSet noise_set(std::size_t n, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  ImageSet s;
  s.native = size;
  for (std::size_t i = 0; i < n; ++i) {
    ImageBuffer img(size, size, 3);
    for (auto& v : img.data) v = float(rng.uniform(0.2, 0.8));
    s.images.push_back(img);
    s.labels.push_back(kReal);
  }
  return s;
}

GanConfig tiny_gan(int steps) {
  GanConfig c;
  c.latent_dim = 4;
  c.image_size = 32;
  c.width = 8;
  c.steps = steps;
  c.batch = 4;
  c.seed = 11;
  return c;
}

EvasionConfig tiny_evasion(int steps, double real_weight) {
  EvasionConfig c;
  c.steps = steps;
  c.batch = 4;
  c.real_weight = real_weight;
  c.seed = 5;
  return c;
}

TEST(Generator, ShapeAndBoundedRange) {
  auto b = make_adversary(16, 64, 16, 1);
  const Tensor<float> x = generate(b, 3, 2);
  EXPECT_EQ(x.shape(), (Shape{3, 3, 64, 64}));
  for (float v : x.values()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
  EXPECT_EQ(generate(b, 3, 2), x);
  EXPECT_FALSE(generate(b, 3, 3) == x);
}

TEST(Generator, RejectsSizesNotDivisibleByEight) {
  EXPECT_THROW(build_generator(16, 60, 16), ConfigError);
  EXPECT_THROW(build_discriminator(12, 16), ConfigError);
}

TEST(Discriminator, OneLogitPerImage) {
  auto b = make_adversary(4, 32, 8, 1);
  const auto& y = b.discriminator.forward(generate(b, 5, 0));
  EXPECT_EQ(y.shape(), (Shape{5, 1, 1, 1}));
}

TEST(GanTrain, ZeroStepsIsInitialization) {
  const auto real = noise_set(8, 32, 1);
  auto r = gan_train(real, tiny_gan(0));
  const auto fresh = make_adversary(4, 32, 8, 11);
  EXPECT_EQ(r.bundle.generator.state(), fresh.generator.state());
  EXPECT_EQ(r.bundle.discriminator.state(), fresh.discriminator.state());
  EXPECT_TRUE(r.trace.d_loss.empty());
}

TEST(GanTrain, FixedSeedGivesIdenticalTraces) {
  const auto real = noise_set(8, 32, 1);
  const auto a = gan_train(real, tiny_gan(6));
  const auto b = gan_train(real, tiny_gan(6));
  EXPECT_EQ(a.trace.d_loss, b.trace.d_loss);
  EXPECT_EQ(a.trace.g_loss, b.trace.g_loss);
  EXPECT_EQ(a.bundle.generator.state(), b.bundle.generator.state());
  EXPECT_EQ(a.trace.d_loss.size(), 6u);
}

TEST(GanTrain, EmptyRealSetIsDataError) {
  ImageSet empty;
  empty.native = 32;
  EXPECT_THROW(gan_train(empty, tiny_gan(1)), DataError);
}

TEST(GanTrain, CollapsedGeneratorRaisesWarningEvent) {
  const auto real = noise_set(8, 32, 1);
  auto b = make_adversary(4, 32, 8, 1);
  for (auto& p : b.generator.parameters()) p.tensor->fill(0.f);
  EXPECT_NEAR(sample_variance(b, 8, 0), 0.0, 1e-12);
  auto cfg = tiny_evasion(1, 0.0);
  cfg.lr = 1e-9;
  const auto trace = gan_continue(b, real, cfg);
  ASSERT_EQ(trace.events.size(), 1u);
  EXPECT_NE(trace.events[0].find("mode collapse"), std::string::npos);
}

TEST(Evasion, ZeroRealWeightIsPlainContinuation) {
  const auto real = noise_set(8, 32, 1);
  auto a = gan_train(real, tiny_gan(3)).bundle;
  auto b = gan_train(real, tiny_gan(3)).bundle;
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 2, 32);
  const auto ta = evasion_finetune(a, real, model, tiny_evasion(4, 0.0));
  const auto tb = gan_continue(b, real, tiny_evasion(4, 0.0));
  EXPECT_EQ(ta.g_loss, tb.g_loss);
  EXPECT_EQ(ta.d_loss, tb.d_loss);
  EXPECT_EQ(a.generator.state(), b.generator.state());
  EXPECT_EQ(a.discriminator.state(), b.discriminator.state());
}

TEST(Evasion, ClassifierBitwiseUnchangedAndRealLossUsed) {
  const auto real = noise_set(8, 32, 1);
  auto b = gan_train(real, tiny_gan(2)).bundle;
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 2, 32);
  model.graph.set_training(true);
  const auto before = state_hash(model.graph.state());
  const auto trace = evasion_finetune(b, real, model, tiny_evasion(3, 1.0));
  EXPECT_EQ(state_hash(model.graph.state()), before);
  EXPECT_TRUE(model.graph.training());
  for (const auto& p : model.graph.parameters()) EXPECT_TRUE(p.tensor->requires_grad());
  for (double l : trace.real_loss) EXPECT_GT(l, 0.0);
  // The classifier term changes the generator's updates.
  auto c = gan_train(real, tiny_gan(2)).bundle;
  gan_continue(c, real, tiny_evasion(3, 1.0));
  EXPECT_FALSE(c.generator.state() == b.generator.state());
}

TEST(Discriminator, AccuracyIsAFraction) {
  const auto real = noise_set(6, 32, 1);
  auto b = make_adversary(4, 32, 8, 1);
  const double acc = discriminator_accuracy(b, real, 3);
  EXPECT_GE(acc, 0.0);
  EXPECT_LE(acc, 1.0);
  EXPECT_EQ(acc, discriminator_accuracy(b, real, 3));
}

// ---- reprojection ----

TEST(Reproject, KnownLatentIsAFixedPoint) {
  auto b = make_adversary(4, 32, 8, 7);
  const std::vector<double> z0{0.3, -1.2, 0.8, 0.1};
  Tensor<float> zt({1, 4, 1, 1});
  for (std::size_t d = 0; d < 4; ++d) zt[d] = float(z0[d]);
  const ImageBuffer target = image_from_tensor(b.generator.forward(zt), 0);
  ReprojectConfig cfg;
  cfg.steps = 20;
  const auto r = reproject(b.generator, target, cfg, &z0);
  EXPECT_EQ(r.loss, 0.0);
  EXPECT_EQ(r.z, z0);
  EXPECT_EQ(r.reconstruction, target);
}

TEST(Reproject, ZeroStepsReturnsInitialGeneration) {
  auto b = make_adversary(4, 32, 8, 7);
  const std::vector<double> z0{0.5, 0.5, -0.5, 1.0};
  Tensor<float> zt({1, 4, 1, 1});
  for (std::size_t d = 0; d < 4; ++d) zt[d] = float(z0[d]);
  const ImageBuffer g0 = image_from_tensor(b.generator.forward(zt), 0);
  Rng rng(3);
  ImageBuffer target(32, 32, 3);
  for (auto& v : target.data) v = float(rng.uniform());
  ReprojectConfig cfg;
  cfg.steps = 0;
  const auto r = reproject(b.generator, target, cfg, &z0);
  EXPECT_EQ(r.reconstruction, g0);
  EXPECT_EQ(r.trace.size(), 1u);
}

TEST(Reproject, BestSoFarTraceNonIncreasingAndImproves) {
  auto b = make_adversary(4, 32, 8, 7);
  const auto targets = generated_image_set(b, 3, 99);
  for (const auto& t : targets.images) {
    ReprojectConfig cfg;
    cfg.steps = 60;
    cfg.restarts = 2;
    cfg.seed = 4;
    const auto r = reproject(b.generator, t, cfg);
    ASSERT_EQ(r.trace.size(), 2u * 61u);
    for (std::size_t i = 1; i < r.trace.size(); ++i) EXPECT_LE(r.trace[i], r.trace[i - 1]);
    EXPECT_LT(r.trace.back(), r.trace.front());
    EXPECT_EQ(r.loss, r.trace.back());
  }
}

TEST(Reproject, ParametersUntouched) {
  auto b = make_adversary(4, 32, 8, 7);
  const auto before = state_hash(b.generator.state());
  ReprojectConfig cfg;
  cfg.steps = 5;
  reproject(b.generator, generated_image_set(b, 1, 1).images[0], cfg);
  EXPECT_EQ(state_hash(b.generator.state()), before);
  for (const auto& p : b.generator.parameters()) EXPECT_TRUE(p.tensor->requires_grad());
}

TEST(ReprojectionManifest, PairsEveryRealWithItsReprojection) {
  TempDir dir;
  SynthConfig sc;
  sc.size = 32;
  sc.train_count = 3;
  sc.val_count = 1;
  sc.test_count = 1;
  sc.seed = 2;
  const auto source = synth_dataset(sc, dir / "src");
  auto b = make_adversary(4, 32, 8, 7);
  ReprojectConfig cfg;
  cfg.steps = 2;
  cfg.restarts = 1;
  const auto m = build_reprojection_manifest(b, source, cfg, dir / "reproj");
  const auto reals = source.count(kReal);
  EXPECT_EQ(m.records.size(), 2 * reals);
  EXPECT_EQ(m.count(kReal), reals);
  std::set<std::string> real_ids;
  for (const auto& r : m.records)
    if (r.label == kReal) real_ids.insert(r.pair_id);
  for (const auto& r : m.records)
    if (r.label == kFake) {
      EXPECT_TRUE(real_ids.count(r.pair_id)) << r.pair_id;
      EXPECT_EQ(r.generator, "reprojection");
    }
  const auto reloaded = load_manifest(dir / "reproj" / "manifest.jsonl");
  EXPECT_EQ(reloaded.records.size(), m.records.size());
}

TEST(AdversaryCheckpoint, RoundTrip) {
  TempDir dir;
  auto b = make_adversary(4, 32, 8, 7);
  save_adversary(b, dir.path());
  auto c = load_adversary(dir.path());
  EXPECT_EQ(c.latent_dim, 4u);
  EXPECT_EQ(c.image_size, 32u);
  EXPECT_EQ(c.generator.state(), b.generator.state());
  EXPECT_EQ(c.discriminator.state(), b.discriminator.state());
  EXPECT_EQ(load_checkpoint(dir / "generator.ckpt").model, "generator");
}

}  // namespace
}  // namespace pf
