#pragma once

#include <string>
#include <vector>

#include "pf/pipeline/image.hpp"

namespace pf {

// L(x) = sinc(x) sinc(x / 3) on |x| < 3, zero elsewhere.
double lanczos3(double x);

// One output sample's taps: source indices [first, first + weights.size()).
struct ResampleRow {
  long first = 0;
  std::vector<double> weights;
};

// Per-output-sample Lanczos-3 weights for resampling a line of `in` samples
// to `out` samples. Pixel centers align: source position = (j + 0.5) in/out - 0.5.
// When downsampling the kernel is stretched by in/out. Taps falling outside
// the line are dropped and each row is renormalized to sum to 1.
std::vector<ResampleRow> lanczos_weights(std::size_t in, std::size_t out);

ImageBuffer lanczos_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h);
ImageBuffer nearest_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h);

enum class ResizeMethod { lanczos, nearest };
ResizeMethod resize_method_from_string(const std::string& name);
ImageBuffer resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h, ResizeMethod method);

// Crop of the given size at (x0, y0); throws StructuralError if out of bounds.
ImageBuffer crop(const ImageBuffer& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h);
ImageBuffer center_crop(const ImageBuffer& img, std::size_t w, std::size_t h);

}  // namespace pf
