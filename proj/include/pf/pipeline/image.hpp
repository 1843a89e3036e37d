#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "pf/diffcore/errors.hpp"
#include "pf/diffcore/tensor.hpp"

namespace pf {

// Planar (channel-major) float image with values in [0, 1].
struct ImageBuffer {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<float> data;

  ImageBuffer() = default;
  ImageBuffer(std::size_t w, std::size_t h, std::size_t c, float fill = 0.f);

  std::size_t size() const { return data.size(); }
  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  void clamp();
  bool operator==(const ImageBuffer&) const = default;
};

// 8-bit PNG, grayscale or RGB. Values are rounded to the nearest 1/255.
ImageBuffer read_png(const std::filesystem::path& path);
void write_png(const ImageBuffer& img, const std::filesystem::path& path);

// Rounds every value to the 8-bit lattice the PNG writer produces.
ImageBuffer quantize8(const ImageBuffer& img);

// Writes image `i` of the batch tensor from an image of matching size.
void copy_to_tensor(const ImageBuffer& img, Tensor<float>& batch, std::size_t i);
ImageBuffer image_from_tensor(const Tensor<float>& batch, std::size_t i);

}  // namespace pf
