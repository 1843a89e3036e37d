#include "pf/pipeline/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>

namespace pf {

ImageBuffer::ImageBuffer(std::size_t w, std::size_t h, std::size_t c, float fill)
    : width(w), height(h), channels(c), data(w * h * c, fill) {
  if (c != 1 && c != 3) throw StructuralError("image channels must be 1 or 3, got " + std::to_string(c));
}

void ImageBuffer::clamp() {
  for (auto& v : data) v = std::clamp(v, 0.f, 1.f);
}

namespace {

std::uint8_t to_byte(float v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.f, 1.f) * 255.f)); }

}  // namespace

ImageBuffer quantize8(const ImageBuffer& img) {
  ImageBuffer out = img;
  for (auto& v : out.data) v = static_cast<float>(to_byte(v)) / 255.f;
  return out;
}

ImageBuffer read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str()))
    throw IoError("cannot read PNG '" + path.string() + "': " + png.message);
  const bool gray = !(png.format & PNG_FORMAT_FLAG_COLOR);
  png.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<std::uint8_t> bytes(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, bytes.data(), 0, nullptr)) {
    png_image_free(&png);
    throw IoError("cannot decode PNG '" + path.string() + "': " + png.message);
  }
  const std::size_t c = gray ? 1 : 3;
  ImageBuffer img(png.width, png.height, c);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t k = 0; k < c; ++k) img.at(k, y, x) = bytes[(y * img.width + x) * c + k] / 255.f;
  return img;
}

void write_png(const ImageBuffer& img, const std::filesystem::path& path) {
  const std::size_t c = img.channels;
  std::vector<std::uint8_t> bytes(img.width * img.height * c);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t k = 0; k < c; ++k) bytes[(y * img.width + x) * c + k] = to_byte(img.at(k, y, x));
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = c == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr))
    throw IoError("cannot write PNG '" + path.string() + "': " + png.message);
}

void copy_to_tensor(const ImageBuffer& img, Tensor<float>& batch, std::size_t i) {
  if (batch.rank() != 4 || batch.dim(1) != img.channels || batch.dim(2) != img.height || batch.dim(3) != img.width)
    throw StructuralError("image " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                          " does not fit batch " + shape_str(batch.shape()));
  std::copy(img.data.begin(), img.data.end(), batch.data() + i * img.size());
}

ImageBuffer image_from_tensor(const Tensor<float>& batch, std::size_t i) {
  ImageBuffer img(batch.dim(3), batch.dim(2), batch.dim(1));
  const float* src = batch.data() + i * img.size();
  std::copy(src, src + img.size(), img.data.begin());
  return img;
}

}  // namespace pf
