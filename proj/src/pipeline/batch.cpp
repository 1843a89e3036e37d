#include "pf/pipeline/batch.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "pf/diffcore/parallel.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf {

std::string to_string(AugmentMode m) {
  switch (m) {
    case AugmentMode::none: return "none";
    case AugmentMode::random_crop: return "random_crop";
    case AugmentMode::random_resized_crop: return "random_resized_crop";
  }
  return "?";
}

AugmentMode augment_mode_from_string(const std::string& name) {
  if (name == "none") return AugmentMode::none;
  if (name == "random_crop") return AugmentMode::random_crop;
  if (name == "random_resized_crop") return AugmentMode::random_resized_crop;
  throw ConfigError("unknown augmentation mode '" + name + "'");
}

ImageBuffer augment(const ImageBuffer& img, AugmentMode mode, Rng& rng) {
  const std::size_t n = img.width;
  switch (mode) {
    case AugmentMode::none: return img;
    case AugmentMode::random_crop: {
      const auto big = static_cast<std::size_t>(std::lround(double(n) * 333.0 / 299.0));
      const ImageBuffer up = lanczos_resize(img, big, big);
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, long(big - n)));
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, long(big - n)));
      return crop(up, x0, y0, n, n);
    }
    case AugmentMode::random_resized_crop: {
      const auto side = static_cast<std::size_t>(rng.uniform_int(long((n + 1) / 2), long(n)));
      const auto x0 = static_cast<std::size_t>(rng.uniform_int(0, long(n - side)));
      const auto y0 = static_cast<std::size_t>(rng.uniform_int(0, long(n - side)));
      return lanczos_resize(crop(img, x0, y0, side, side), n, n);
    }
  }
  return img;
}

ImageSet load_image_set(const DatasetManifest& manifest, std::size_t native) {
  ImageSet set;
  set.native = native;
  set.images.resize(manifest.records.size());
  set.labels.resize(manifest.records.size());
  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& r = manifest.records[i];
    ImageBuffer img = load_record_image(manifest, r);
    if (img.channels != 3) throw DataError("record '" + r.path + "' is not RGB");
    if (img.width != native || img.height != native) img = lanczos_resize(img, native, native);
    set.images[i] = std::move(img);
    set.labels[i] = r.label;
  });
  return set;
}

Tensor<float> make_batch(const ImageSet& set, const std::vector<std::size_t>& indices, AugmentMode mode, Rng& rng) {
  Tensor<float> batch({indices.size(), 3, set.native, set.native});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const ImageBuffer& img = set.images.at(indices[i]);
    if (mode == AugmentMode::none) {
      copy_to_tensor(img, batch, i);
    } else {
      copy_to_tensor(augment(img, mode, rng), batch, i);
    }
  }
  return batch;
}

BatchSampler::BatchSampler(const DatasetManifest& manifest, std::size_t batch_size, std::uint64_t seed)
    : batch_size_(batch_size), rng_(seed) {
  if (batch_size < 2 || batch_size % 2) throw ConfigError("batch size must be even and at least 2");
  std::map<std::string, Unit> by_pair;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& r = manifest.records[i];
    (r.label == kReal ? all_reals_ : all_fakes_).push_back(i);
    if (r.pair_id.empty()) {
      (r.label == kReal ? reals_ : fakes_).push_back(i);
    } else {
      auto& u = by_pair[r.pair_id];
      (r.label == kReal ? u.real : u.fake) = i;
    }
  }
  if (all_reals_.empty() || all_fakes_.empty())
    throw DataError("batching needs both classes; manifest has " + std::to_string(all_reals_.size()) + " real and " +
                    std::to_string(all_fakes_.size()) + " fake records");
  // Pairs in first-appearance order so the schedule depends on the manifest only.
  std::vector<std::pair<std::size_t, Unit>> ordered;
  for (const auto& [id, u] : by_pair) ordered.push_back({std::min(u.real, u.fake), u});
  std::sort(ordered.begin(), ordered.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [first, u] : ordered) pairs_.push_back(u);
}

std::vector<std::vector<std::size_t>> BatchSampler::next_epoch() {
  std::vector<Unit> units = pairs_;
  if (!reals_.empty() || !fakes_.empty()) {
    std::vector<std::size_t> r = reals_.empty() ? all_reals_ : reals_;
    std::vector<std::size_t> f = fakes_.empty() ? all_fakes_ : fakes_;
    rng_.shuffle(std::span(r));
    rng_.shuffle(std::span(f));
    const std::size_t n = std::max(reals_.size(), fakes_.size());
    std::vector<std::size_t> rr = r, ff = f;
    while (rr.size() < n) {
      rng_.shuffle(std::span(r));
      rr.insert(rr.end(), r.begin(), r.end());
    }
    while (ff.size() < n) {
      rng_.shuffle(std::span(f));
      ff.insert(ff.end(), f.begin(), f.end());
    }
    for (std::size_t i = 0; i < n; ++i) units.push_back({rr[i], ff[i]});
  }
  rng_.shuffle(std::span(units));
  std::vector<std::vector<std::size_t>> batches;
  const std::size_t per = batch_size_ / 2;
  for (std::size_t b = 0; b < units.size(); b += per) {
    std::vector<std::size_t> batch;
    for (std::size_t k = b; k < std::min(units.size(), b + per); ++k) {
      batch.push_back(units[k].real);
      batch.push_back(units[k].fake);
    }
    batches.push_back(std::move(batch));
  }
  return batches;
}

Batch load_batch(const DatasetManifest& manifest, std::size_t batch_size, Rng& rng, std::size_t native) {
  BatchSampler sampler(manifest, batch_size, rng.next_u64());
  auto epoch = sampler.next_epoch();
  Batch out;
  out.indices = std::move(epoch.front());
  DatasetManifest sub{manifest.root, {}};
  for (auto i : out.indices) sub.records.push_back(manifest.records[i]);
  if (native == 0) native = load_record_image(manifest, sub.records.front()).width;
  const ImageSet set = load_image_set(sub, native);
  std::vector<std::size_t> all(set.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  out.images = make_batch(set, all, AugmentMode::none, rng);
  out.labels = set.labels;
  return out;
}

}  // namespace pf
