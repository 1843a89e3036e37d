#include "pf/pipeline/synth.hpp"

#include <array>
#include <cmath>
#include <numbers>

#include "pf/diffcore/parallel.hpp"
#include "pf/pipeline/codec.hpp"
#include "pf/pipeline/equalize.hpp"

namespace pf {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::uint64_t mix(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

struct Wave {
  double fx, fy, phase, amp;
};

// Band-limited sinusoid field per channel around a random mean colour.
ImageBuffer render_waves(const SynthConfig& cfg, std::size_t size, Rng& rng) {
  ImageBuffer img(size, size, 3);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = rng.uniform(0.35, 0.65);
    std::vector<Wave> waves(static_cast<std::size_t>(cfg.waves));
    double total = 0.0;
    for (auto& w : waves) {
      const double f = rng.uniform(cfg.freq_lo, cfg.freq_hi);
      const double theta = rng.uniform(0.0, kTwoPi);
      w = {f * std::cos(theta), f * std::sin(theta), rng.uniform(0.0, kTwoPi), rng.uniform(0.5, 1.0)};
      total += w.amp;
    }
    for (std::size_t y = 0; y < size; ++y)
      for (std::size_t x = 0; x < size; ++x) {
        double s = 0.0;
        for (const auto& w : waves) s += w.amp * std::cos(kTwoPi * (w.fx * double(x) + w.fy * double(y)) + w.phase);
        img.at(c, y, x) = static_cast<float>(mean + 0.2 * s / std::max(total, 1e-9));
      }
  }
  return img;
}

// Overlays sharp-edged discs and rectangles; each keeps a damped copy of the
// underlying texture. Shape k is segmentation class 1 + k % 6.
void overlay_shapes(const SynthConfig& cfg, ImageBuffer& img, ImageBuffer& seg, Rng& rng) {
  const double n = double(img.width);
  for (int k = 0; k < cfg.shapes; ++k) {
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, n), cy = rng.uniform(0.0, n);
    const double rx = rng.uniform(0.08, 0.25) * n, ry = disc ? rx : rng.uniform(0.08, 0.25) * n;
    float colour[3];
    for (auto& v : colour) v = static_cast<float>(rng.uniform(0.2, 0.8));
    const float cls = static_cast<float>(1 + k % 6) / 255.f;
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x) {
        const double dx = (double(x) - cx) / rx, dy = (double(y) - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (!inside) continue;
        for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = colour[c] + 0.3f * (img.at(c, y, x) - 0.5f);
        seg.at(0, y, x) = cls;
      }
  }
}

// Same geometry as the image chain, nearest-neighbour so labels stay integral.
ImageBuffer transform_labels(const ImageBuffer& seg, const std::vector<TransformStep>& chain) {
  std::vector<TransformStep> geometric;
  for (auto s : chain) {
    if (s.name == "normalize") continue;
    s.method = ResizeMethod::nearest;
    geometric.push_back(s);
  }
  return equalize(seg, geometric);
}

void add_artifact(ImageBuffer& img, const ImageBuffer& pattern, const ImageBuffer* mask) {
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < img.height; ++y)
      for (std::size_t x = 0; x < img.width; ++x)
        if (!mask || mask->at(0, y, x) > 0.5f) img.at(c, y, x) += pattern.at(0, y, x);
  img.clamp();
}

std::string index_name(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 5 ? 5 - s.size() : 0, '0') + s;
}

}  // namespace

std::string to_string(SynthMode m) {
  switch (m) {
    case SynthMode::generated: return "generated";
    case SynthMode::spliced: return "spliced";
    case SynthMode::codec_confound: return "codec_confound";
  }
  return "?";
}

SynthMode synth_mode_from_string(const std::string& name) {
  if (name == "generated") return SynthMode::generated;
  if (name == "spliced") return SynthMode::spliced;
  if (name == "codec_confound") return SynthMode::codec_confound;
  throw ConfigError("unknown synth mode '" + name + "'");
}

void SynthConfig::validate() const {
  if (train_count < 1 || val_count < 1 || test_count < 1) throw ConfigError("synth counts must be at least 1");
  if (size < 32) throw ConfigError("synth image size must be at least 32 (twice the deepest grid spacing)");
  if (!(freq_lo > 0 && freq_lo <= freq_hi && freq_hi <= 0.5)) throw ConfigError("texture band must satisfy 0 < lo <= hi <= 0.5");
  if (!(grain >= 0.0)) throw ConfigError("grain must be non-negative");
  if (waves < 1 || shapes < 0) throw ConfigError("texture needs at least one wave and a non-negative shape count");
  if (!(artifact_period >= 2.0)) throw ConfigError("artifact period must be at least 2 pixels");
  if (!(artifact_amplitude >= 0.0)) throw ConfigError("artifact amplitude must be non-negative");
  if (!(envelope_sigma >= 0.0)) throw ConfigError("envelope sigma must be non-negative");
  if (!(0.0 < splice_min && splice_min <= splice_max && splice_max <= 1.0)) throw ConfigError("splice fractions must satisfy 0 < min <= max <= 1");
  for (double s : {real_codec_strength, fake_codec_strength})
    if (!(s >= 0.0 && s <= 1.0)) throw ConfigError("codec strength must lie in [0, 1]");
  const auto chain = parse_transform_chain(transform_chain);
  const std::size_t src = source_size ? source_size : size;
  const ImageBuffer probe = equalize(ImageBuffer(src, src, 1), chain);
  if (probe.width != size || probe.height != size)
    throw ConfigError("transform chain '" + transform_chain + "' maps " + std::to_string(src) + "px sources to " +
                      std::to_string(probe.width) + "px, expected " + std::to_string(size));
}

ImageBuffer artifact_pattern(const SynthConfig& cfg) {
  ImageBuffer p(cfg.size, cfg.size, 1);
  const double n = double(cfg.size);
  const double ex = cfg.envelope_x * n, ey = cfg.envelope_y * n, es = cfg.envelope_sigma * n;
  for (std::size_t y = 0; y < cfg.size; ++y)
    for (std::size_t x = 0; x < cfg.size; ++x) {
      double env = 1.0;
      if (es > 0) {
        const double dx = double(x) - ex, dy = double(y) - ey;
        env = std::exp(-(dx * dx + dy * dy) / (2 * es * es));
      }
      const double checker =
          std::cos(kTwoPi * double(x) / cfg.artifact_period) * std::cos(kTwoPi * double(y) / cfg.artifact_period);
      p.at(0, y, x) = static_cast<float>(cfg.artifact_amplitude * env * checker);
    }
  return p;
}

SynthSample synth_sample(const SynthConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const auto chain = parse_transform_chain(cfg.transform_chain);
  const std::size_t src = cfg.source_size ? cfg.source_size : cfg.size;
  auto draw = [&](ImageBuffer& img, ImageBuffer& seg) {
    ImageBuffer content = render_waves(cfg, src, rng);
    ImageBuffer labels(src, src, 1);
    overlay_shapes(cfg, content, labels, rng);
    if (cfg.grain > 0)
      for (auto& v : content.data) v += static_cast<float>(cfg.grain * rng.normal());
    content.clamp();
    img = equalize(content, chain);
    seg = transform_labels(labels, chain);
  };

  SynthSample s;
  draw(s.real, s.real_segmentation);
  const ImageBuffer pattern = artifact_pattern(cfg);
  switch (cfg.mode) {
    case SynthMode::generated:
      s.fake = s.real;
      s.fake_segmentation = s.real_segmentation;
      add_artifact(s.fake, pattern, nullptr);
      break;
    case SynthMode::spliced: {
      // Both images receive the pasted region; only the fake's carries the artifact.
      const double n = double(cfg.size);
      const auto side = static_cast<std::size_t>(std::lround(rng.uniform(cfg.splice_min, cfg.splice_max) * n));
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, long(cfg.size - side)));
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, long(cfg.size - side)));
      const ImageBuffer region = render_waves(cfg, cfg.size, rng);
      s.mask = ImageBuffer(cfg.size, cfg.size, 1);
      for (std::size_t y = y0; y < y0 + side; ++y)
        for (std::size_t x = x0; x < x0 + side; ++x) {
          for (std::size_t c = 0; c < 3; ++c) s.real.at(c, y, x) = region.at(c, y, x);
          s.real_segmentation.at(0, y, x) = kSpliceClass / 255.f;
          s.mask.at(0, y, x) = 1.f;
        }
      s.fake = s.real;
      s.fake_segmentation = s.real_segmentation;
      add_artifact(s.fake, pattern, &s.mask);
      break;
    }
    case SynthMode::codec_confound:
      draw(s.fake, s.fake_segmentation);
      break;
  }
  s.real = codec_confound(s.real, cfg.real_codec_strength);
  s.fake = codec_confound(s.fake, cfg.fake_codec_strength);
  return s;
}

DatasetManifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir) {
  cfg.validate();
  namespace fs = std::filesystem;
  struct Job {
    Split split;
    std::size_t index;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  for (auto [split, n] : {std::pair{Split::train, cfg.train_count}, std::pair{Split::val, cfg.val_count},
                          std::pair{Split::test, cfg.test_count}}) {
    for (const char* sub : {"real", "fake", "seg", "mask"}) {
      std::error_code ec;
      fs::create_directories(out_dir / to_string(split) / sub, ec);
      if (ec) throw IoError("cannot create '" + (out_dir / to_string(split) / sub).string() + "': " + ec.message());
    }
    for (std::size_t i = 0; i < n; ++i)
      jobs.push_back({split, i, mix(mix(cfg.seed) ^ (static_cast<std::uint64_t>(split) << 40) ^ i)});
  }

  const bool paired = cfg.mode != SynthMode::codec_confound;
  std::vector<std::array<ImageRecord, 2>> records(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    const Job& job = jobs[j];
    const SynthSample s = synth_sample(cfg, job.seed);
    const std::string sp = to_string(job.split), id = index_name(job.index);
    ImageRecord real, fake;
    real.path = sp + "/real/" + id + ".png";
    fake.path = sp + "/fake/" + id + ".png";
    fake.label = kFake;
    real.segmentation_path = sp + "/seg/real_" + id + ".png";
    fake.segmentation_path = sp + "/seg/fake_" + id + ".png";
    if (!s.mask.data.empty()) fake.mask_path = sp + "/mask/" + id + ".png";
    for (auto* r : {&real, &fake}) {
      r->generator = cfg.generator;
      r->split = job.split;
      if (paired) r->pair_id = cfg.generator + "/" + sp + "/" + id;
    }
    save_record_image(s.real, out_dir / real.path);
    save_record_image(s.fake, out_dir / fake.path);
    write_png(s.real_segmentation, out_dir / real.segmentation_path);
    write_png(s.fake_segmentation, out_dir / fake.segmentation_path);
    if (!fake.mask_path.empty()) write_png(s.mask, out_dir / fake.mask_path);
    records[j] = {real, fake};
  });

  DatasetManifest m{out_dir, {}};
  for (const auto& pair : records) m.records.insert(m.records.end(), pair.begin(), pair.end());
  m.validate(true);
  save_manifest(m, out_dir / "manifest.jsonl");
  return m;
}

}  // namespace pf
