#pragma once

#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "pf/forensics/classifier.hpp"
#include "pf/pipeline/image.hpp"

namespace pf {

// Inclusive pixel bounds of a patch, clipped to the image.
struct PixelBox {
  long y0 = 0, y1 = 0, x0 = 0, x1 = 0;
  long height() const { return y1 - y0 + 1; }
  long width() const { return x1 - x0 + 1; }
  bool empty() const { return y1 < y0 || x1 < x0; }
  bool contains(long y, long x) const { return y >= y0 && y <= y1 && x >= x0 && x <= x1; }
  bool operator==(const PixelBox&) const = default;
};

// Maps output-grid cells to input pixels for an image of a given size.
struct PatchGeometry {
  ReceptiveFieldInfo rf;
  std::size_t image_h = 0, image_w = 0;

  // Center of cell (i, j) before clipping: start + index * jump per axis.
  std::pair<double, double> center(std::size_t i, std::size_t j) const;
  // [center - rf/2, center + rf/2] per axis, clipped to the image.
  PixelBox box(std::size_t i, std::size_t j) const;
  // Nearest cell to pixel (y, x), clamped to the h x w grid.
  std::pair<std::size_t, std::size_t> cell_at(double y, double x, std::size_t h, std::size_t w) const;
};

// Min-max rescaling to [0, 1]; a constant input maps to all 0.5.
std::vector<double> normalize_minmax(std::span<const double> v, double* lo = nullptr, double* hi = nullptr);

struct Heatmap {
  std::size_t h = 0, w = 0;
  std::vector<double> raw;         // fake probability per cell, row-major
  std::vector<double> normalized;  // min-max of raw
  double min = 0.0, max = 0.0;     // range used by the normalization
  PatchGeometry geometry;

  double at(std::size_t i, std::size_t j) const { return raw[i * w + j]; }
  // Raw heat of the nearest cell for every pixel (1 channel, image sized).
  ImageBuffer pixel_heat() const;

  static Heatmap from_raw(std::size_t h, std::size_t w, std::vector<double> raw, const PatchGeometry& geometry);
};

Heatmap heatmap_from_grid(const PatchGrid& grid, const PatchGeometry& geometry);
Heatmap heatmap(Classifier& model, const ImageBuffer& image);
std::vector<Heatmap> heatmaps(Classifier& model, const ImageSet& images);

struct AverageHeatmap {
  Heatmap map;
  std::size_t requested = 0;
  std::size_t shortfall = 0;          // requested minus images actually available
  std::vector<std::size_t> selected;  // indices into the image set, most confident first
};

// Averages the raw grids of the k most confidently and correctly ensembled
// images of class `label`, then normalizes once.
AverageHeatmap average_heatmap(Classifier& model, const ImageSet& images, std::size_t k, int label);

struct TopPatch {
  std::size_t i = 0, j = 0;
  PixelBox box;
  double confidence = 0.0;  // probability of the predicted class at the cell
  int predicted = kReal;
};

// Cell with the highest probability of the image's ensembled class; ties go
// to the row-major first cell.
TopPatch top_patch(const PatchGrid& grid, const PatchGeometry& geometry);
TopPatch top_patch(Classifier& model, const ImageBuffer& image);

// Mean raw heat over mask pixels (mask > 0.5) minus the mean over the rest.
double mask_contrast(const Heatmap& map, const ImageBuffer& mask);

// Localization over the fakes of a split that carry an artifact mask.
struct LocalizationStats {
  std::size_t images = 0;
  double mean_contrast = 0.0;  // mean of mask_contrast over the images
  double top_in_mask = 0.0;    // fraction whose top patch center lies in the mask
  std::vector<double> contrasts;
  std::vector<bool> hits;
};
// Throws DataError when no fake in the split has a mask.
LocalizationStats localization(Classifier& model, const LoadedSplit& split);

// Grayscale 8-bit PNG of the normalized grid (one pixel per cell, upscaled by
// `scale`) and a JSON sidecar next to it with geometry and normalization.
void export_heatmap(const Heatmap& map, const std::filesystem::path& png, std::size_t scale = 8);

}  // namespace pf
