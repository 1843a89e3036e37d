#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pf/pipeline/image.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf {

// One step of a generator's data transform. Recognized names:
//   center_crop  size           (square crop)
//   resize       size, method   (square resize, lanczos or nearest)
//   normalize                   (per-image min-max stretch; constant images unchanged)
struct TransformStep {
  std::string name;
  std::size_t size = 0;
  ResizeMethod method = ResizeMethod::lanczos;
};

// Parses "center_crop:32,resize:64:lanczos,normalize". Empty text is the empty chain.
std::vector<TransformStep> parse_transform_chain(const std::string& text);
std::string to_string(const std::vector<TransformStep>& chain);

struct AuditLog {
  std::vector<std::string> entries;
  void record(std::string entry) { entries.push_back(std::move(entry)); }
};

// Runs the chain in order, appending one audit entry per step.
ImageBuffer equalize(const ImageBuffer& img, const std::vector<TransformStep>& chain, AuditLog* audit = nullptr);

// The single terminal encode path shared by every saved record: 8-bit lossless PNG.
void save_record_image(const ImageBuffer& img, const std::filesystem::path& path, AuditLog* audit = nullptr);

}  // namespace pf
