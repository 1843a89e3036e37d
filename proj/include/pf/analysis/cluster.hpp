#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "pf/analysis/heatmap.hpp"

namespace pf {

// Per-pixel class ids, row-major.
struct SegmentationMap {
  std::size_t width = 0, height = 0;
  std::vector<int> labels;

  int at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
};

// Class ids are stored as 8-bit gray levels in a one-channel image.
SegmentationMap segmentation_from_image(const ImageBuffer& img);
SegmentationMap load_segmentation(const DatasetManifest& manifest, const ImageRecord& record, std::size_t size);

// Class maximizing (pixels of c in box) / (pixels of c in the image); ties
// go to the lower id.
int assign_cluster(const PixelBox& box, const SegmentationMap& seg);

enum class ClusterMode { top, random };
std::string_view to_string(ClusterMode m);
ClusterMode cluster_mode_from_string(std::string_view s);

struct ClusterHistogram {
  std::map<int, std::size_t> counts;
  std::size_t total = 0;
  std::string model, manifest, selection;

  double fraction(int cls) const;
};

// One patch per image (the top patch, or a uniformly drawn cell seeded from
// `seed` and the image index), assigned to a cluster and tallied.
ClusterHistogram cluster_histogram(Classifier& model, const LoadedSplit& split, ClusterMode mode, std::uint64_t seed);

// Total-variation distance between the normalized histograms.
double total_variation(const ClusterHistogram& a, const ClusterHistogram& b);

void save_histogram_json(const ClusterHistogram& h, const std::filesystem::path& path);
// Simple bar chart, one bar per class in id order.
void save_histogram_png(const ClusterHistogram& h, const std::filesystem::path& path);

}  // namespace pf
