#pragma once

#include <array>

#include "pf/pipeline/image.hpp"

namespace pf {

// Standard JPEG luminance quantization table (quality 50), row-major over (v, u).
extern const std::array<int, 64> kJpegLuminanceTable;

// Lossy block-transform codec simulator. Each channel is cut into 8x8 blocks
// (edge blocks padded by edge replication), level-shifted by 0.5, transformed
// with the orthonormal 8x8 DCT-II, every coefficient rounded to a multiple of
// strength * table / 255, inverted and clamped to [0, 1]. Strength 0 returns
// the image unchanged. On images whose sides are multiples of 8 and whose
// reconstruction needs no clamping, the operation is a projection.
ImageBuffer codec_confound(const ImageBuffer& img, double strength);

}  // namespace pf
