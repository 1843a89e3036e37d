#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "pf/analysis/cluster.hpp"
#include "pf/analysis/exaggerate.hpp"
#include "pf/analysis/heatmap.hpp"
#include "pf/adversary/gan.hpp"
#include "pf/pipeline/synth.hpp"
#include "support/temp_dir.hpp"

namespace pf {
namespace {

using testing::TempDir;

PatchGeometry geo(long rf, long jump, double start, std::size_t size) { return {{rf, jump, start}, size, size}; }

ImageBuffer noise_image(std::size_t n, Rng& rng) {
  ImageBuffer img(n, n, 3);
  for (auto& v : img.data) v = float(rng.uniform());
  return img;
}

// ---- normalization ----

TEST(Normalize, ConstantGridIsHalf) {
  const auto n = normalize_minmax(std::vector<double>{0.3, 0.3, 0.3});
  for (double v : n) EXPECT_EQ(v, 0.5);
}

TEST(Normalize, TwoValueExample) {
  const auto n = normalize_minmax(std::vector<double>{0.2, 0.8});
  EXPECT_EQ(n[0], 0.0);
  EXPECT_EQ(n[1], 1.0);
}

TEST(Normalize, IdempotentAndOrderPreserving) {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(std::size_t(rng.uniform_int(2, 30)));
    for (auto& x : v) x = rng.uniform(0.0, 1.0);
    const auto once = normalize_minmax(v);
    const auto twice = normalize_minmax(once);
    for (std::size_t i = 0; i < v.size(); ++i) {
      EXPECT_NEAR(once[i], twice[i], 1e-12);
      EXPECT_GE(once[i], 0.0);
      EXPECT_LE(once[i], 1.0);
      for (std::size_t j = 0; j < v.size(); ++j)
        if (v[i] < v[j]) {
          EXPECT_LT(once[i], once[j]);
        }
    }
  }
}

TEST(Heatmap, ConstantLogitsNormalizeToHalf) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 1, 32);
  const auto head = backbone_plan(model.spec).back().name;
  for (auto& p : model.graph.parameters())
    if (p.name.starts_with(head + ".")) p.tensor->fill(0.f);
  Rng rng(1);
  const Heatmap m = heatmap(model, noise_image(32, rng));
  ASSERT_GT(m.raw.size(), 1u);
  for (double v : m.normalized) EXPECT_EQ(v, 0.5);
  for (double v : m.raw) EXPECT_NEAR(v, 0.5, 1e-12);
  EXPECT_EQ(m.geometry.rf, model.geometry());
}

TEST(Heatmap, RejectsWrongSize) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 1, 32);
  Rng rng(1);
  EXPECT_THROW(heatmap(model, noise_image(40, rng)), StructuralError);
}

// ---- geometry ----

TEST(Geometry, BoxFollowsCenterAndClips) {
  const auto g = geo(19, 4, 7.0, 64);
  EXPECT_EQ(g.box(2, 3), (PixelBox{15 - 9, 15 + 9, 19 - 9, 19 + 9}));
  EXPECT_EQ(g.box(0, 0), (PixelBox{0, 16, 0, 16}));
  const auto far = g.box(14, 14);  // center 63
  EXPECT_EQ(far.y1, 63);
  EXPECT_EQ(far.x0, 63 - 9);
}

TEST(Geometry, CenterRoundTripsToCell) {
  for (const char* spec : {"xception:1", "xception:2", "xception:3", "resnet:1"}) {
    auto model = make_classifier(BackboneSpec::parse(spec), 0, 128);
    const auto out = model.graph.output_shape({1, 3, 128, 128});
    const PatchGeometry g{model.geometry(), 128, 128};
    for (std::size_t i = 0; i < out[2]; ++i)
      for (std::size_t j = 0; j < out[3]; ++j) {
        const auto [cy, cx] = g.center(i, j);
        EXPECT_EQ(g.cell_at(cy, cx, out[2], out[3]), std::make_pair(i, j)) << spec;
      }
  }
}

TEST(Geometry, PixelHeatUsesNearestCell) {
  const auto m = Heatmap::from_raw(2, 2, {0.1, 0.2, 0.3, 0.4}, geo(9, 8, 3.5, 16));
  const ImageBuffer heat = m.pixel_heat();
  EXPECT_FLOAT_EQ(heat.at(0, 0, 0), 0.1f);
  EXPECT_FLOAT_EQ(heat.at(0, 0, 15), 0.2f);
  EXPECT_FLOAT_EQ(heat.at(0, 15, 0), 0.3f);
  EXPECT_FLOAT_EQ(heat.at(0, 15, 15), 0.4f);
}

TEST(Geometry, MaskContrast) {
  const auto m = Heatmap::from_raw(2, 2, {0.9, 0.1, 0.1, 0.1}, geo(9, 8, 3.5, 16));
  ImageBuffer mask(16, 16, 1);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) mask.at(0, y, x) = 1.f;
  EXPECT_NEAR(mask_contrast(m, mask), 0.8, 1e-6);
  EXPECT_THROW(mask_contrast(m, ImageBuffer(16, 16, 1)), DataError);
}

// ---- top patch ----

TEST(TopPatch, SingleCell) {
  const auto t = top_patch(PatchGrid::from_fake_probs(1, 1, {0.3}), geo(5, 1, 2, 5));
  EXPECT_EQ(t.i, 0u);
  EXPECT_EQ(t.j, 0u);
  EXPECT_EQ(t.predicted, kReal);
  EXPECT_NEAR(t.confidence, 0.7, 1e-12);
}

TEST(TopPatch, RowMajorTieBreak) {
  const auto t = top_patch(PatchGrid::from_fake_probs(1, 3, {0.1, 0.9, 0.9}), geo(5, 2, 2, 8));
  EXPECT_EQ(t.predicted, kFake);
  EXPECT_EQ(t.j, 1u);
  EXPECT_NEAR(t.confidence, 0.9, 1e-12);
  const auto r = top_patch(PatchGrid::from_fake_probs(2, 2, {0.4, 0.2, 0.2, 0.45}), geo(5, 2, 2, 8));
  EXPECT_EQ(r.predicted, kReal);
  EXPECT_EQ(std::make_pair(r.i, r.j), std::make_pair(std::size_t(0), std::size_t(1)));
}

// ---- averaged heatmaps ----

// Image set labelled with the model's own ensembled decisions, so every image
// counts as correctly classified.
ImageSet self_labelled(Classifier& model, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  ImageSet set;
  set.native = model.native;
  for (std::size_t i = 0; i < n; ++i) set.images.push_back(noise_image(model.native, rng));
  for (const auto& g : predict(model, set)) set.labels.push_back(aggregate(g).label);
  return set;
}

TEST(AverageHeatmap, SingleImageIsItsHeatmap) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 2, 32);
  const ImageSet set = self_labelled(model, 6, 1);
  const int label = set.labels[0];
  const auto avg = average_heatmap(model, set, 1, label);
  ASSERT_EQ(avg.selected.size(), 1u);
  const auto single = heatmap(model, set.images[avg.selected[0]]);
  EXPECT_EQ(avg.map.raw, single.raw);
  EXPECT_EQ(avg.map.normalized, single.normalized);
}

TEST(AverageHeatmap, IdenticalImagesAverageToEither) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 2, 32);
  ImageSet set = self_labelled(model, 1, 4);
  set.images.push_back(set.images[0]);
  set.labels.push_back(set.labels[0]);
  const auto avg = average_heatmap(model, set, 2, set.labels[0]);
  const auto one = heatmap(model, set.images[0]);
  for (std::size_t i = 0; i < one.raw.size(); ++i) EXPECT_NEAR(avg.map.raw[i], one.raw[i], 1e-12);
}

TEST(AverageHeatmap, WholeClassIsPlainMeanAndShortfallRecorded) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 5, 32);
  const ImageSet set = self_labelled(model, 10, 9);
  const int label = set.labels[0];
  const auto count = std::size_t(std::count(set.labels.begin(), set.labels.end(), label));
  const auto avg = average_heatmap(model, set, count + 3, label);
  EXPECT_EQ(avg.shortfall, 3u);
  EXPECT_EQ(avg.selected.size(), count);
  std::vector<double> mean(avg.map.raw.size(), 0.0);
  for (std::size_t n = 0; n < set.size(); ++n)
    if (set.labels[n] == label) {
      const auto h = heatmap(model, set.images[n]);
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += h.raw[i] / double(count);
    }
  for (std::size_t i = 0; i < mean.size(); ++i) EXPECT_NEAR(avg.map.raw[i], mean[i], 1e-9);
}

TEST(AverageHeatmap, SelectsMostConfidentFirst) {
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 5, 32);
  const ImageSet set = self_labelled(model, 12, 2);
  const int label = set.labels[0];
  const auto avg = average_heatmap(model, set, 3, label);
  const auto grids = predict(model, set);
  auto conf = [&](std::size_t n) {
    const double s = aggregate(grids[n]).fake_score;
    return label == kFake ? s : 1 - s;
  };
  for (std::size_t r = 1; r < avg.selected.size(); ++r)
    EXPECT_GE(conf(avg.selected[r - 1]), conf(avg.selected[r]));
}

// ---- clusters ----

SegmentationMap seg_from(std::size_t w, std::size_t h, std::vector<int> labels) { return {w, h, std::move(labels)}; }

TEST(AssignCluster, BoxInsideOneRegion) {
  std::vector<int> l(100, 1);
  for (std::size_t y = 0; y < 5; ++y)
    for (std::size_t x = 0; x < 5; ++x) l[y * 10 + x] = 4;
  EXPECT_EQ(assign_cluster({1, 3, 1, 3}, seg_from(10, 10, l)), 4);
  EXPECT_EQ(assign_cluster({6, 9, 6, 9}, seg_from(10, 10, l)), 1);
}

TEST(AssignCluster, NormalizesByImageWideClassArea) {
  // 100 px box: 30 px of class A (100 image-wide) and 70 px of class B (1000).
  const std::size_t W = 110, H = 10;
  std::vector<int> l(W * H, 0);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) l[y * W + x] = (x < 10) ? 2 : 3;  // A = 2 (100 px), B = 3 (1000 px)
  // Box columns 7..16 rows 0..9: 30 px of A, 70 px of B.
  const PixelBox box{0, 9, 7, 16};
  EXPECT_EQ(box.height() * box.width(), 100);
  EXPECT_EQ(assign_cluster(box, seg_from(W, H, l)), 2);
}

TEST(AssignCluster, TiesGoToLowerId) {
  std::vector<int> l(16);
  for (std::size_t i = 0; i < 16; ++i) l[i] = (i % 4 < 2) ? 5 : 3;
  EXPECT_EQ(assign_cluster({0, 3, 0, 3}, seg_from(4, 4, l)), 3);
}

TEST(AssignCluster, EmptyBoxIsAnError) {
  EXPECT_THROW(assign_cluster({2, 1, 0, 0}, seg_from(4, 4, std::vector<int>(16, 1))), StructuralError);
}

TEST(AssignCluster, InvariantToUniformUpscaling) {
  Rng rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = std::size_t(rng.uniform_int(4, 12));
    std::vector<int> l(n * n);
    for (auto& v : l) v = int(rng.uniform_int(0, 4));
    const long y0 = rng.uniform_int(0, long(n) - 1), x0 = rng.uniform_int(0, long(n) - 1);
    const PixelBox box{y0, rng.uniform_int(y0, long(n) - 1), x0, rng.uniform_int(x0, long(n) - 1)};
    std::vector<int> up(4 * n * n);
    for (std::size_t y = 0; y < 2 * n; ++y)
      for (std::size_t x = 0; x < 2 * n; ++x) up[y * 2 * n + x] = l[(y / 2) * n + x / 2];
    const PixelBox big{2 * box.y0, 2 * box.y1 + 1, 2 * box.x0, 2 * box.x1 + 1};
    EXPECT_EQ(assign_cluster(box, seg_from(n, n, l)), assign_cluster(big, seg_from(2 * n, 2 * n, up)));
  }
}

SynthConfig small_spliced() {
  SynthConfig cfg;
  cfg.mode = SynthMode::spliced;
  cfg.size = 32;
  cfg.train_count = 3;
  cfg.val_count = 1;
  cfg.test_count = 1;
  cfg.seed = 12;
  return cfg;
}

TEST(ClusterHistogram, CountsSumToImageCount) {
  TempDir dir;
  const auto m = synth_dataset(small_spliced(), dir.path());
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 1, 32);
  const auto split = load_split(m.filter(Split::train), 32);
  for (auto mode : {ClusterMode::top, ClusterMode::random}) {
    const auto h = cluster_histogram(model, split, mode, 4);
    std::size_t sum = 0;
    for (const auto& [c, n] : h.counts) sum += n;
    EXPECT_EQ(sum, h.total);
    EXPECT_EQ(h.total, split.manifest.records.size());
  }
  EXPECT_EQ(cluster_histogram(model, split, ClusterMode::random, 4).counts,
            cluster_histogram(model, split, ClusterMode::random, 4).counts);
}

TEST(ClusterHistogram, SingleImageHasOneCount) {
  TempDir dir;
  const auto m = synth_dataset(small_spliced(), dir.path());
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 1, 32);
  DatasetManifest one = m;
  one.records.resize(1);
  const auto h = cluster_histogram(model, load_split(one, 32), ClusterMode::top, 0);
  EXPECT_EQ(h.total, 1u);
  ASSERT_EQ(h.counts.size(), 1u);
  EXPECT_EQ(h.counts.begin()->second, 1u);
}

TEST(ClusterHistogram, MissingSegmentationIsDataError) {
  TempDir dir;
  auto m = synth_dataset(small_spliced(), dir.path());
  m.records[0].segmentation_path.clear();
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 1, 32);
  EXPECT_THROW(cluster_histogram(model, load_split(m, 32), ClusterMode::top, 0), DataError);
}

TEST(Localization, AgreesWithPerImageHeatmapsAndTopPatches) {
  TempDir dir;
  const auto m = synth_dataset(small_spliced(), dir.path());
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 3, 32);
  const auto split = load_split(m.filter(Split::train), 32);
  const auto st = localization(model, split);
  ASSERT_EQ(st.images, m.filter(Split::train).count(kFake));
  const PatchGeometry geo{model.geometry(), 32, 32};
  std::size_t n = 0, hits = 0;
  double sum = 0;
  for (std::size_t r = 0; r < split.manifest.records.size(); ++r) {
    const auto& rec = split.manifest.records[r];
    if (rec.label != kFake) continue;
    const ImageBuffer mask = read_png(split.manifest.resolve(rec.mask_path));
    const auto& img = split.images.images[r];
    EXPECT_DOUBLE_EQ(st.contrasts[n], mask_contrast(heatmap(model, img), mask));
    const auto top = top_patch(model, img);
    const auto [cy, cx] = geo.center(top.i, top.j);
    const bool hit = mask.at(0, std::size_t(std::lround(cy)), std::size_t(std::lround(cx))) > 0.5f;
    EXPECT_EQ(st.hits[n], hit);
    hits += hit;
    sum += st.contrasts[n];
    ++n;
  }
  EXPECT_DOUBLE_EQ(st.top_in_mask, double(hits) / double(n));
  EXPECT_NEAR(st.mean_contrast, sum / double(n), 1e-12);
}

TEST(Localization, NoMasksIsDataError) {
  TempDir dir;
  SynthConfig cfg = small_spliced();
  cfg.mode = SynthMode::generated;
  const auto m = synth_dataset(cfg, dir.path());
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 3, 32);
  EXPECT_THROW(localization(model, load_split(m, 32)), DataError);
}

TEST(ClusterHistogram, TotalVariationAndExport) {
  ClusterHistogram a, b;
  a.counts = {{1, 3}, {2, 1}};
  a.total = 4;
  b.counts = {{2, 2}};
  b.total = 2;
  EXPECT_NEAR(total_variation(a, b), 0.75, 1e-12);
  EXPECT_EQ(total_variation(a, a), 0.0);
  TempDir dir;
  save_histogram_json(a, dir / "h.json");
  save_histogram_png(a, dir / "h.png");
  std::ifstream f(dir / "h.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["counts"]["1"], 3);
  EXPECT_EQ(j["total"], 4);
  EXPECT_TRUE(std::filesystem::exists(dir / "h.png"));
}

// ---- export ----

TEST(Export, PngAndSidecar) {
  TempDir dir;
  const auto m = Heatmap::from_raw(2, 3, {0.1, 0.2, 0.3, 0.4, 0.5, 0.7}, geo(19, 4, 7, 32));
  export_heatmap(m, dir / "maps" / "a.png", 4);
  const ImageBuffer img = read_png(dir / "maps" / "a.png");
  EXPECT_EQ(img.width, 12u);
  EXPECT_EQ(img.height, 8u);
  EXPECT_EQ(img.channels, 1u);
  EXPECT_FLOAT_EQ(img.at(0, 0, 0), 0.f);
  EXPECT_FLOAT_EQ(img.at(0, 7, 11), 1.f);
  std::ifstream f(dir / "maps" / "a.json");
  const auto j = nlohmann::json::parse(f);
  EXPECT_EQ(j["geometry"]["rf"], 19);
  EXPECT_EQ(j["geometry"]["jump"], 4);
  EXPECT_DOUBLE_EQ(j["normalization"]["min"].get<double>(), 0.1);
  EXPECT_DOUBLE_EQ(j["normalization"]["max"].get<double>(), 0.7);
}

// ---- exaggeration ----

TEST(Exaggerate, QuadraticSurrogateOptimum) {
  ExaggerateConfig cfg;
  cfg.steps = 2000;
  cfg.lr = 0.05;
  const auto s = exaggerate(quadratic_shift_objective(1.0), 1, cfg);
  EXPECT_NEAR(s.w[0], -0.5, 1e-3);
}

TEST(Exaggerate, HeavyRegularizerKeepsShiftNearZero) {
  ExaggerateConfig cfg;
  cfg.steps = 2000;
  cfg.lr = 0.05;
  for (double lambda : {1e2, 1e4, 1e6}) {
    const auto s = exaggerate(quadratic_shift_objective(lambda), 1, cfg);
    EXPECT_NEAR(s.w[0], -1.0 / (1.0 + lambda), 2e-3) << lambda;
  }
}

TEST(Exaggerate, ZeroStepsReturnsZero) {
  ExaggerateConfig cfg;
  cfg.steps = 0;
  const auto s = exaggerate(quadratic_shift_objective(1.0), 4, cfg);
  EXPECT_EQ(s.w, std::vector<double>(4, 0.0));
}

TEST(Exaggerate, AcceptedObjectiveNeverIncreases) {
  for (double lr : {0.01, 0.3, 2.0}) {
    ExaggerateConfig cfg;
    cfg.steps = 300;
    cfg.lr = lr;
    const auto s = exaggerate(quadratic_shift_objective(0.5), 1, cfg);
    for (std::size_t i = 1; i < s.trace.size(); ++i) EXPECT_LE(s.trace[i], s.trace[i - 1]);
  }
}

TEST(Exaggerate, NonFiniteObjectiveAborts) {
  const ShiftObjective bad = [](std::span<const double>, std::size_t, std::span<const double> w,
                                std::span<double> g) {
    g[0] = 1;
    return w[0] < -0.005 ? std::nan("") : w[0];
  };
  ExaggerateConfig cfg;
  cfg.steps = 10;
  EXPECT_THROW(exaggerate(bad, 1, cfg), NumericError);
}

TEST(Exaggerate, GeneratorObjectiveGradientMatchesDifferences) {
  auto bundle = make_adversary(4, 32, 8, 3);
  auto model = make_classifier(BackboneSpec::parse("xception:1"), 4, 32);
  const auto obj = generator_shift_objective(bundle.generator, model, 0.7);
  const std::size_t batch = 6;
  Rng rng(2);
  std::vector<double> z(batch * 4), w(4), v(4);
  for (auto& x : z) x = rng.normal();
  for (auto& x : w) x = rng.uniform(-0.3, 0.3);
  for (auto& x : v) x = rng.uniform(-1, 1);
  std::vector<double> g(4);
  obj(z, batch, w, g);
  // Relu and maxpool kinks within the step make differences converge slowly;
  // h = 1e-3 stays clear of float cancellation at this objective scale.
  const double h = 1e-3;
  auto at = [&](double s) {
    std::vector<double> ws(4), scratch(4);
    for (std::size_t d = 0; d < 4; ++d) ws[d] = w[d] + s * v[d];
    return obj(z, batch, ws, scratch);
  };
  const double fd = (at(h) - at(-h)) / (2 * h);
  double an = 0;
  for (std::size_t d = 0; d < 4; ++d) an += g[d] * v[d];
  EXPECT_NEAR(an, fd, 5e-2 * std::max({std::abs(an), std::abs(fd), 1e-2}));
  // Parameters are untouched and their grad flags restored.
  for (const auto& p : model.graph.parameters()) EXPECT_TRUE(p.tensor->requires_grad());
}

TEST(Exaggerate, ZeroShiftLeavesSamplesUnchanged) {
  auto bundle = make_adversary(4, 32, 8, 3);
  std::vector<double> z(8);
  Rng rng(1);
  for (auto& x : z) x = rng.normal();
  const std::vector<double> zero(4, 0.0);
  EXPECT_EQ(shifted_samples(bundle.generator, z, 2, zero, 1.0), shifted_samples(bundle.generator, z, 2, zero, -1.0));
}

}  // namespace
}  // namespace pf
