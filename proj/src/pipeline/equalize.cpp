#include "pf/pipeline/equalize.hpp"

#include <algorithm>
#include <sstream>

namespace pf {

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> parts;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, sep)) parts.push_back(item);
  return parts;
}

std::size_t parse_size(const std::string& text, const std::string& step) {
  try {
    std::size_t used = 0;
    const long v = std::stol(text, &used);
    if (used == text.size() && v > 0) return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
  }
  throw ConfigError("invalid size '" + text + "' in transform step '" + step + "'");
}

ImageBuffer normalize_range(const ImageBuffer& img) {
  const auto [lo, hi] = std::minmax_element(img.data.begin(), img.data.end());
  if (lo == img.data.end() || *hi <= *lo) return img;
  ImageBuffer out = img;
  const float a = *lo, d = *hi - *lo;
  for (auto& v : out.data) v = (v - a) / d;
  return out;
}

std::string describe(const TransformStep& s) {
  if (s.name == "center_crop") return "center_crop:" + std::to_string(s.size);
  if (s.name == "resize")
    return "resize:" + std::to_string(s.size) + (s.method == ResizeMethod::lanczos ? ":lanczos" : ":nearest");
  return s.name;
}

}  // namespace

std::vector<TransformStep> parse_transform_chain(const std::string& text) {
  std::vector<TransformStep> chain;
  for (const auto& item : split(text, ',')) {
    if (item.empty()) continue;
    const auto f = split(item, ':');
    TransformStep s{f[0]};
    if (s.name == "center_crop" && f.size() == 2) {
      s.size = parse_size(f[1], item);
    } else if (s.name == "resize" && (f.size() == 2 || f.size() == 3)) {
      s.size = parse_size(f[1], item);
      if (f.size() == 3) s.method = resize_method_from_string(f[2]);
    } else if (s.name == "normalize" && f.size() == 1) {
    } else {
      throw ConfigError("unknown transform step '" + item + "'");
    }
    chain.push_back(s);
  }
  return chain;
}

std::string to_string(const std::vector<TransformStep>& chain) {
  std::string out;
  for (const auto& s : chain) out += (out.empty() ? "" : ",") + describe(s);
  return out;
}

ImageBuffer equalize(const ImageBuffer& img, const std::vector<TransformStep>& chain, AuditLog* audit) {
  ImageBuffer cur = img;
  for (const auto& s : chain) {
    if (s.name == "center_crop") {
      cur = center_crop(cur, s.size, s.size);
    } else if (s.name == "resize") {
      cur = resize(cur, s.size, s.size, s.method);
    } else if (s.name == "normalize") {
      cur = normalize_range(cur);
    } else {
      throw ConfigError("unknown transform step '" + s.name + "'");
    }
    cur.clamp();
    if (audit) audit->record(describe(s));
  }
  return cur;
}

void save_record_image(const ImageBuffer& img, const std::filesystem::path& path, AuditLog* audit) {
  write_png(img, path);
  if (audit) audit->record("encode:png8");
}

}  // namespace pf
