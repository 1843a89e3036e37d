#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pf/backbones/backbone.hpp"
#include "pf/backbones/receptive_field.hpp"
#include "pf/forensics/patch.hpp"
#include "pf/pipeline/batch.hpp"

namespace pf {

// A truncated backbone with its 2-class head, plus the input size images are
// resized to before classification.
struct Classifier {
  BackboneSpec spec;
  Graph<float> graph;
  std::size_t native = 64;

  ReceptiveFieldInfo geometry() const { return receptive_field(backbone_plan(spec)); }
};

Classifier make_classifier(const BackboneSpec& spec, std::uint64_t seed, std::size_t native = 64);

// Manifest with its images decoded at a fixed native size.
struct LoadedSplit {
  DatasetManifest manifest;
  ImageSet images;
};
LoadedSplit load_split(const DatasetManifest& manifest, std::size_t native);
// Wraps decoded images (for example generator samples) as an unpaired split
// whose records carry labels only.
LoadedSplit in_memory_split(ImageSet images);

// Evaluation-mode patch grids for every image, in chunks of `chunk` images.
std::vector<PatchGrid> predict(Classifier& model, const ImageSet& images, std::size_t chunk = 32);
std::vector<PatchGrid> predict(Classifier& model, const Tensor<float>& batch);

struct EvalResult {
  double ap = 0.0;
  double patch_acc = 0.0;
  double image_acc = 0.0;
  std::vector<double> scores;  // per-image ensembled fake score
  std::vector<int> labels;
  std::vector<int> predicted;
};

// AP is computed from the ensembled per-image scores; it is left at 0 when
// the set lacks one of the classes.
EvalResult evaluate(Classifier& model, const ImageSet& images);

// Raw patch accuracy of the model over a decoded image set.
double raw_patch_accuracy(Classifier& model, const ImageSet& images);

}  // namespace pf
