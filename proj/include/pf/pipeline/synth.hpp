#pragma once

#include <filesystem>
#include <string>

#include "pf/diffcore/rng.hpp"
#include "pf/pipeline/manifest.hpp"

namespace pf {

enum class SynthMode { generated, spliced, codec_confound };
std::string to_string(SynthMode m);
SynthMode synth_mode_from_string(const std::string& name);

// Segmentation class carried by the pasted region in spliced mode.
inline constexpr int kSpliceClass = 7;

struct SynthConfig {
  SynthMode mode = SynthMode::generated;
  std::size_t size = 64;
  // Items per split: pairs in generated/spliced mode, images per class in codec_confound mode.
  std::size_t train_count = 200, val_count = 50, test_count = 50;

  // Texture: sum of `waves` sinusoids per channel with spatial frequency in
  // [freq_lo, freq_hi] cycles/pixel, overlaid with `shapes` sharp-edged
  // regions, plus i.i.d. Gaussian grain of std-dev `grain`.
  double freq_lo = 0.02, freq_hi = 0.15;
  int waves = 6;
  int shapes = 4;
  double grain = 0.02;

  // Artifact: amplitude * envelope(x, y) * cos(2 pi x / period) cos(2 pi y / period),
  // envelope a Gaussian at (envelope_x, envelope_y) * size with std-dev
  // envelope_sigma * size, or 1 everywhere when envelope_sigma is 0.
  double artifact_period = 2.0;
  double artifact_amplitude = 0.06;
  double envelope_x = 0.5, envelope_y = 0.5, envelope_sigma = 0.0;

  // Spliced region side as a fraction of the image side.
  double splice_min = 0.3, splice_max = 0.5;

  double real_codec_strength = 0.0, fake_codec_strength = 0.0;

  // Data transform the real images traverse before saving; textures are
  // rendered at source_size (0 = size) and the chain must yield size x size.
  std::string transform_chain;
  std::size_t source_size = 0;

  std::string generator = "toy";
  std::uint64_t seed = 0;

  void validate() const;
};

// Per-pixel artifact amplitude pattern (before it is added to the texture),
// single channel, values in [-amplitude, amplitude].
ImageBuffer artifact_pattern(const SynthConfig& cfg);

// One rendered example. `real` and `fake` share content in generated and
// spliced modes; mask is empty unless the fake carries a spliced region.
struct SynthSample {
  ImageBuffer real, fake;
  ImageBuffer real_segmentation, fake_segmentation;
  ImageBuffer mask;
};
SynthSample synth_sample(const SynthConfig& cfg, std::uint64_t seed);

// Writes images, masks, segmentation maps and manifest.jsonl under `out_dir`
// and returns the manifest. Output is byte-identical for a fixed config.
DatasetManifest synth_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir);

}  // namespace pf
