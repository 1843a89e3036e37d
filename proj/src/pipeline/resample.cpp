#include "pf/pipeline/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pf {

namespace {

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Applies row weights along one axis: `horizontal` resamples x, otherwise y.
ImageBuffer resample_axis(const ImageBuffer& img, const std::vector<ResampleRow>& rows, bool horizontal) {
  const std::size_t ow = horizontal ? rows.size() : img.width;
  const std::size_t oh = horizontal ? img.height : rows.size();
  ImageBuffer out(ow, oh, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x) {
        const ResampleRow& r = rows[horizontal ? x : y];
        double acc = 0.0;
        for (std::size_t k = 0; k < r.weights.size(); ++k) {
          const auto s = static_cast<std::size_t>(r.first) + k;
          acc += r.weights[k] * (horizontal ? img.at(c, y, s) : img.at(c, s, x));
        }
        out.at(c, y, x) = static_cast<float>(acc);
      }
  return out;
}

}  // namespace

double lanczos3(double x) { return std::abs(x) < 3.0 ? sinc(x) * sinc(x / 3.0) : 0.0; }

std::vector<ResampleRow> lanczos_weights(std::size_t in, std::size_t out) {
  if (in == 0 || out == 0) throw StructuralError("resample sizes must be positive");
  const double ratio = static_cast<double>(in) / static_cast<double>(out);
  const double scale = std::max(1.0, ratio);
  const double support = 3.0 * scale;
  std::vector<ResampleRow> rows(out);
  for (std::size_t j = 0; j < out; ++j) {
    const double center = (static_cast<double>(j) + 0.5) * ratio - 0.5;
    const long lo = std::max(0L, static_cast<long>(std::ceil(center - support)));
    const long hi = std::min(static_cast<long>(in) - 1, static_cast<long>(std::floor(center + support)));
    ResampleRow& r = rows[j];
    r.first = lo;
    double sum = 0.0;
    for (long i = lo; i <= hi; ++i) {
      const double w = lanczos3((static_cast<double>(i) - center) / scale);
      r.weights.push_back(w);
      sum += w;
    }
    for (auto& w : r.weights) w /= sum;
  }
  return rows;
}

ImageBuffer lanczos_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw StructuralError("resize target must be at least 1x1");
  ImageBuffer out = img;
  if (out_w != img.width) out = resample_axis(out, lanczos_weights(img.width, out_w), true);
  if (out_h != img.height) out = resample_axis(out, lanczos_weights(img.height, out_h), false);
  out.clamp();
  return out;
}

ImageBuffer nearest_resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h) {
  if (out_w == 0 || out_h == 0) throw StructuralError("resize target must be at least 1x1");
  ImageBuffer out(out_w, out_h, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x)
        out.at(c, y, x) = img.at(c, y * img.height / out_h, x * img.width / out_w);
  return out;
}

ResizeMethod resize_method_from_string(const std::string& name) {
  if (name == "lanczos") return ResizeMethod::lanczos;
  if (name == "nearest") return ResizeMethod::nearest;
  throw ConfigError("unknown resize method '" + name + "'");
}

ImageBuffer resize(const ImageBuffer& img, std::size_t out_w, std::size_t out_h, ResizeMethod method) {
  return method == ResizeMethod::lanczos ? lanczos_resize(img, out_w, out_h) : nearest_resize(img, out_w, out_h);
}

ImageBuffer crop(const ImageBuffer& img, std::size_t x0, std::size_t y0, std::size_t w, std::size_t h) {
  if (w == 0 || h == 0 || x0 + w > img.width || y0 + h > img.height)
    throw StructuralError("crop " + std::to_string(w) + "x" + std::to_string(h) + " at (" + std::to_string(x0) +
                          "," + std::to_string(y0) + ") exceeds image " + std::to_string(img.width) + "x" +
                          std::to_string(img.height));
  ImageBuffer out(w, h, img.channels);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

ImageBuffer center_crop(const ImageBuffer& img, std::size_t w, std::size_t h) {
  if (w > img.width || h > img.height) return crop(img, 0, 0, w, h);  // raises
  return crop(img, (img.width - w) / 2, (img.height - h) / 2, w, h);
}

}  // namespace pf
