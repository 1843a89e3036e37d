#include "pf/pipeline/codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace pf {

const std::array<int, 64> kJpegLuminanceTable = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,  14, 13, 16, 24, 40,  57,
    69, 56, 14, 17, 22,  29,  51,  87,  80, 62, 18, 22, 37,  56,  68,  109, 103, 77, 24, 35, 55, 64,
    81, 104, 113, 92, 49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99,
};

namespace {

using Block = std::array<double, 64>;

struct DctBasis {
  std::array<double, 64> m{};  // m[u * 8 + x]
  DctBasis() {
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        m[u * 8 + x] = (u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) *
                       std::cos((2 * x + 1) * u * std::numbers::pi / 16.0);
  }
};

const DctBasis& basis() {
  static const DctBasis b;
  return b;
}

// out = A * in * A^T with A = m (forward) or m^T (inverse).
Block transform(const Block& in, bool inverse) {
  const auto& m = basis().m;
  auto a = [&](int r, int c) { return inverse ? m[c * 8 + r] : m[r * 8 + c]; };
  Block tmp{}, out{};
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += a(r, k) * in[k * 8 + c];
      tmp[r * 8 + c] = s;
    }
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 8; ++c) {
      double s = 0.0;
      for (int k = 0; k < 8; ++k) s += tmp[r * 8 + k] * a(c, k);
      out[r * 8 + c] = s;
    }
  return out;
}

}  // namespace

ImageBuffer codec_confound(const ImageBuffer& img, double strength) {
  if (!(strength >= 0.0 && strength <= 1.0)) throw ConfigError("codec strength must lie in [0, 1]");
  if (strength == 0.0) return img;
  ImageBuffer out = img;
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t by = 0; by < img.height; by += 8)
      for (std::size_t bx = 0; bx < img.width; bx += 8) {
        Block b{};
        for (std::size_t y = 0; y < 8; ++y)
          for (std::size_t x = 0; x < 8; ++x)
            b[y * 8 + x] =
                img.at(c, std::min(by + y, img.height - 1), std::min(bx + x, img.width - 1)) - 0.5;
        Block f = transform(b, false);
        for (int k = 0; k < 64; ++k) {
          const double step = strength * kJpegLuminanceTable[k] / 255.0;
          f[k] = std::round(f[k] / step) * step;
        }
        const Block r = transform(f, true);
        for (std::size_t y = 0; y < 8 && by + y < img.height; ++y)
          for (std::size_t x = 0; x < 8 && bx + x < img.width; ++x)
            out.at(c, by + y, bx + x) = static_cast<float>(r[y * 8 + x] + 0.5);
      }
  out.clamp();
  return out;
}

}  // namespace pf
