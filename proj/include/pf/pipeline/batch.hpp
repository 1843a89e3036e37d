#pragma once

#include <string>
#include <vector>

#include "pf/diffcore/rng.hpp"
#include "pf/diffcore/tensor.hpp"
#include "pf/pipeline/manifest.hpp"

namespace pf {

enum class AugmentMode { none, random_crop, random_resized_crop };
std::string to_string(AugmentMode m);
AugmentMode augment_mode_from_string(const std::string& name);

// random_crop: Lanczos resize to round(native * 333 / 299), then a native-size
// crop at a uniform offset. random_resized_crop: a square crop whose side is
// uniform in [native / 2, native] at a uniform offset, resized back to native.
// The input must already be native x native.
ImageBuffer augment(const ImageBuffer& img, AugmentMode mode, Rng& rng);

// Images of a manifest decoded and resized (Lanczos) to native x native.
struct ImageSet {
  std::vector<ImageBuffer> images;
  std::vector<int> labels;
  std::size_t native = 0;
  std::size_t size() const { return images.size(); }
};
ImageSet load_image_set(const DatasetManifest& manifest, std::size_t native);

// Stacks the given images (augmented with `rng` when mode != none) into an NCHW tensor.
Tensor<float> make_batch(const ImageSet& set, const std::vector<std::size_t>& indices, AugmentMode mode, Rng& rng);

// Balanced batch schedule over record indices. A batch holds batch_size / 2
// units, each one real and one fake record; a paired real and fake always
// form one unit. Unpaired reals and fakes are zipped in permuted order, the
// shorter side cycled through a fresh permutation. Balanced corpora therefore
// see every record exactly once per epoch.
class BatchSampler {
 public:
  BatchSampler(const DatasetManifest& manifest, std::size_t batch_size, std::uint64_t seed);

  // All batches of the next epoch (the last may be smaller; it stays balanced).
  std::vector<std::vector<std::size_t>> next_epoch();
  std::size_t batch_size() const { return batch_size_; }

 private:
  struct Unit {
    std::size_t real, fake;
  };
  std::vector<Unit> pairs_;
  std::vector<std::size_t> reals_, fakes_;          // unpaired
  std::vector<std::size_t> all_reals_, all_fakes_;  // partners when one unpaired side is empty
  std::size_t batch_size_;
  Rng rng_;
};

// One balanced batch drawn with `rng` from the manifest, decoded at native size.
struct Batch {
  Tensor<float> images;
  std::vector<int> labels;
  std::vector<std::size_t> indices;
};
Batch load_batch(const DatasetManifest& manifest, std::size_t batch_size, Rng& rng, std::size_t native = 0);

}  // namespace pf
