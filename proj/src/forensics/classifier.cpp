#include "pf/forensics/classifier.hpp"

#include <algorithm>

#include "pf/forensics/metrics.hpp"

namespace pf {

Classifier make_classifier(const BackboneSpec& spec, std::uint64_t seed, std::size_t native) {
  return {spec, build_backbone<float>(spec, seed), native};
}

LoadedSplit load_split(const DatasetManifest& manifest, std::size_t native) {
  return {manifest, load_image_set(manifest, native)};
}

LoadedSplit in_memory_split(ImageSet images) {
  LoadedSplit s;
  for (std::size_t i = 0; i < images.size(); ++i) {
    ImageRecord r;
    r.path = "<memory>/" + std::to_string(i);
    r.label = images.labels[i];
    s.manifest.records.push_back(std::move(r));
  }
  s.images = std::move(images);
  return s;
}

std::vector<PatchGrid> predict(Classifier& model, const Tensor<float>& batch) {
  const bool was = model.graph.training();
  model.graph.set_training(false);
  auto grids = grids_from_logits(model.graph.forward(batch));
  model.graph.set_training(was);
  return grids;
}

std::vector<PatchGrid> predict(Classifier& model, const ImageSet& images, std::size_t chunk) {
  std::vector<PatchGrid> grids;
  grids.reserve(images.size());
  Rng unused(0);
  for (std::size_t b = 0; b < images.size(); b += chunk) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(images.size(), b + chunk); ++i) idx.push_back(i);
    auto part = predict(model, make_batch(images, idx, AugmentMode::none, unused));
    std::move(part.begin(), part.end(), std::back_inserter(grids));
  }
  return grids;
}

EvalResult evaluate(Classifier& model, const ImageSet& images) {
  if (images.size() == 0) throw DataError("evaluation set is empty");
  const auto grids = predict(model, images);
  EvalResult r;
  r.labels = images.labels;
  std::size_t correct = 0;
  for (std::size_t n = 0; n < grids.size(); ++n) {
    const Aggregate a = aggregate(grids[n]);
    r.scores.push_back(a.fake_score);
    r.predicted.push_back(a.label);
    correct += a.label == r.labels[n];
  }
  r.image_acc = double(correct) / double(grids.size());
  r.patch_acc = raw_patch_accuracy(std::span<const PatchGrid>(grids), std::span<const int>(r.labels));
  const auto fakes = std::count(r.labels.begin(), r.labels.end(), kFake);
  if (fakes > 0 && std::size_t(fakes) < r.labels.size()) r.ap = average_precision(r.scores, r.labels);
  return r;
}

double raw_patch_accuracy(Classifier& model, const ImageSet& images) {
  if (images.size() == 0) throw DataError("raw patch accuracy needs a nonempty manifest");
  const auto grids = predict(model, images);
  return raw_patch_accuracy(std::span<const PatchGrid>(grids), std::span<const int>(images.labels));
}

}  // namespace pf
