#include "pf/analysis/cluster.hpp"

#include <cmath>
#include <fstream>
#include <set>

#include "json.hpp"
#include "pf/diffcore/rng.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf {

SegmentationMap segmentation_from_image(const ImageBuffer& img) {
  const ImageBuffer q = quantize8(img);
  SegmentationMap s{img.width, img.height, std::vector<int>(img.width * img.height)};
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) s.labels[y * img.width + x] = int(std::lround(q.at(0, y, x) * 255.f));
  return s;
}

SegmentationMap load_segmentation(const DatasetManifest& manifest, const ImageRecord& record, std::size_t size) {
  if (record.segmentation_path.empty()) throw DataError("record " + record.path + " has no segmentation map");
  ImageBuffer img = read_png(manifest.resolve(record.segmentation_path));
  if (img.width != size || img.height != size) img = nearest_resize(img, size, size);
  return segmentation_from_image(img);
}

int assign_cluster(const PixelBox& box, const SegmentationMap& seg) {
  if (box.empty()) throw StructuralError("empty pixel box");
  if (box.y0 < 0 || box.x0 < 0 || box.y1 >= long(seg.height) || box.x1 >= long(seg.width))
    throw StructuralError("pixel box outside the segmentation map");
  std::map<int, std::size_t> whole, inside;
  for (std::size_t y = 0; y < seg.height; ++y)
    for (std::size_t x = 0; x < seg.width; ++x) {
      const int c = seg.at(y, x);
      ++whole[c];
      if (box.contains(long(y), long(x))) ++inside[c];
    }
  int best = -1;
  double best_score = -1.0;
  for (const auto& [c, n] : inside) {  // ascending id, strict > keeps the lower id on ties
    const double score = double(n) / double(whole[c]);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

std::string_view to_string(ClusterMode m) { return m == ClusterMode::top ? "top" : "random"; }

ClusterMode cluster_mode_from_string(std::string_view s) {
  if (s == "top") return ClusterMode::top;
  if (s == "random") return ClusterMode::random;
  throw ConfigError("unknown cluster mode '" + std::string(s) + "'");
}

double ClusterHistogram::fraction(int cls) const {
  const auto it = counts.find(cls);
  return total == 0 || it == counts.end() ? 0.0 : double(it->second) / double(total);
}

ClusterHistogram cluster_histogram(Classifier& model, const LoadedSplit& split, ClusterMode mode, std::uint64_t seed) {
  const auto& records = split.manifest.records;
  for (const auto& r : records)
    if (r.segmentation_path.empty()) throw DataError("record " + r.path + " has no segmentation map");
  const auto grids = predict(model, split.images);
  const PatchGeometry geo{model.geometry(), model.native, model.native};

  ClusterHistogram h;
  h.model = model.spec.to_string();
  h.manifest = split.manifest.root.string();
  h.selection = std::string(to_string(mode));
  if (mode == ClusterMode::random) h.selection += ":" + std::to_string(seed);
  for (std::size_t n = 0; n < records.size(); ++n) {
    PixelBox box;
    if (mode == ClusterMode::top) {
      box = top_patch(grids[n], geo).box;
    } else {
      Rng rng(seed ^ (0x9E3779B97F4A7C15ull * (n + 1)));
      const auto i = std::size_t(rng.uniform_int(0, long(grids[n].h) - 1));
      const auto j = std::size_t(rng.uniform_int(0, long(grids[n].w) - 1));
      box = geo.box(i, j);
    }
    const auto seg = load_segmentation(split.manifest, records[n], model.native);
    ++h.counts[assign_cluster(box, seg)];
    ++h.total;
  }
  return h;
}

double total_variation(const ClusterHistogram& a, const ClusterHistogram& b) {
  std::set<int> ids;
  for (const auto& [c, n] : a.counts) ids.insert(c);
  for (const auto& [c, n] : b.counts) ids.insert(c);
  double d = 0;
  for (int c : ids) d += std::abs(a.fraction(c) - b.fraction(c));
  return d / 2;
}

void save_histogram_json(const ClusterHistogram& h, const std::filesystem::path& path) {
  nlohmann::json counts = nlohmann::json::object();
  for (const auto& [c, n] : h.counts) counts[std::to_string(c)] = n;
  const nlohmann::json j{{"counts", counts},
                         {"total", h.total},
                         {"model", h.model},
                         {"manifest", h.manifest},
                         {"selection", h.selection}};
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

void save_histogram_png(const ClusterHistogram& h, const std::filesystem::path& path) {
  constexpr std::size_t kBar = 16, kGap = 4, kHeight = 128;
  const std::size_t bars = std::max<std::size_t>(h.counts.size(), 1);
  ImageBuffer img(bars * (kBar + kGap) + kGap, kHeight, 1, 1.f);
  std::size_t peak = 1;
  for (const auto& [c, n] : h.counts) peak = std::max(peak, n);
  std::size_t b = 0;
  for (const auto& [c, n] : h.counts) {
    const auto top = kHeight - std::size_t(std::lround(double(n) / double(peak) * double(kHeight - 1)));
    for (std::size_t y = top; y < kHeight; ++y)
      for (std::size_t x = 0; x < kBar; ++x) img.at(0, y, kGap + b * (kBar + kGap) + x) = 0.2f;
    ++b;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  write_png(img, path);
}

}  // namespace pf
