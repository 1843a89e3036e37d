#include "pf/analysis/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"
#include "pf/pipeline/resample.hpp"

namespace pf {

std::pair<double, double> PatchGeometry::center(std::size_t i, std::size_t j) const {
  return {rf.start + double(i) * double(rf.jump), rf.start + double(j) * double(rf.jump)};
}

PixelBox PatchGeometry::box(std::size_t i, std::size_t j) const {
  const auto [cy, cx] = center(i, j);
  const long half = rf.rf / 2;
  const long y = std::lround(cy), x = std::lround(cx);
  PixelBox b{y - half, y + half, x - half, x + half};
  b.y0 = std::max(b.y0, 0L);
  b.x0 = std::max(b.x0, 0L);
  b.y1 = std::min(b.y1, long(image_h) - 1);
  b.x1 = std::min(b.x1, long(image_w) - 1);
  return b;
}

std::pair<std::size_t, std::size_t> PatchGeometry::cell_at(double y, double x, std::size_t h, std::size_t w) const {
  auto axis = [&](double p, std::size_t n) {
    const long c = std::lround((p - rf.start) / double(rf.jump));
    return static_cast<std::size_t>(std::clamp(c, 0L, long(n) - 1));
  };
  return {axis(y, h), axis(x, w)};
}

std::vector<double> normalize_minmax(std::span<const double> v, double* lo, double* hi) {
  std::vector<double> out(v.size(), 0.5);
  if (v.empty()) return out;
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  if (lo) *lo = *mn;
  if (hi) *hi = *mx;
  if (*mx > *mn)
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - *mn) / (*mx - *mn);
  return out;
}

Heatmap Heatmap::from_raw(std::size_t h, std::size_t w, std::vector<double> raw, const PatchGeometry& geometry) {
  if (raw.size() != h * w) throw StructuralError("heatmap values do not fill a " + std::to_string(h) + "x" +
                                                 std::to_string(w) + " grid");
  Heatmap m;
  m.h = h;
  m.w = w;
  m.raw = std::move(raw);
  m.normalized = normalize_minmax(m.raw, &m.min, &m.max);
  m.geometry = geometry;
  return m;
}

ImageBuffer Heatmap::pixel_heat() const {
  ImageBuffer out(geometry.image_w, geometry.image_h, 1);
  for (std::size_t y = 0; y < geometry.image_h; ++y)
    for (std::size_t x = 0; x < geometry.image_w; ++x) {
      const auto [i, j] = geometry.cell_at(double(y), double(x), h, w);
      out.at(0, y, x) = static_cast<float>(at(i, j));
    }
  return out;
}

Heatmap heatmap_from_grid(const PatchGrid& grid, const PatchGeometry& geometry) {
  std::vector<double> raw(grid.patches());
  for (std::size_t i = 0; i < grid.h; ++i)
    for (std::size_t j = 0; j < grid.w; ++j) raw[i * grid.w + j] = grid.fake_prob(i, j);
  return Heatmap::from_raw(grid.h, grid.w, std::move(raw), geometry);
}

namespace {

PatchGeometry geometry_for(const Classifier& model) { return {model.geometry(), model.native, model.native}; }

PatchGrid predict_one(Classifier& model, const ImageBuffer& image) {
  if (image.width != model.native || image.height != model.native || image.channels != 3)
    throw StructuralError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                          " does not match the model input " + std::to_string(model.native) + "x" +
                          std::to_string(model.native));
  Tensor<float> x({1, 3, model.native, model.native});
  copy_to_tensor(image, x, 0);
  return predict(model, x).front();
}

}  // namespace

Heatmap heatmap(Classifier& model, const ImageBuffer& image) {
  return heatmap_from_grid(predict_one(model, image), geometry_for(model));
}

std::vector<Heatmap> heatmaps(Classifier& model, const ImageSet& images) {
  const auto grids = predict(model, images);
  std::vector<Heatmap> out;
  out.reserve(grids.size());
  for (const auto& g : grids) out.push_back(heatmap_from_grid(g, geometry_for(model)));
  return out;
}

AverageHeatmap average_heatmap(Classifier& model, const ImageSet& images, std::size_t k, int label) {
  if (k == 0) throw ConfigError("average_heatmap needs k >= 1");
  const auto grids = predict(model, images);
  std::vector<std::pair<double, std::size_t>> ranked;  // (confidence, index)
  for (std::size_t n = 0; n < grids.size(); ++n) {
    if (images.labels[n] != label) continue;
    const Aggregate a = aggregate(grids[n]);
    if (a.label != label) continue;
    ranked.push_back({label == kFake ? a.fake_score : 1.0 - a.fake_score, n});
  }
  if (ranked.empty()) throw DataError("no correctly classified images of the requested class");
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.first > b.first; });

  AverageHeatmap out;
  out.requested = k;
  const std::size_t used = std::min(k, ranked.size());
  out.shortfall = k - used;
  const auto& first = grids[ranked[0].second];
  std::vector<double> sum(first.patches(), 0.0);
  for (std::size_t r = 0; r < used; ++r) {
    const auto& g = grids[ranked[r].second];
    out.selected.push_back(ranked[r].second);
    for (std::size_t i = 0; i < g.h; ++i)
      for (std::size_t j = 0; j < g.w; ++j) sum[i * g.w + j] += g.fake_prob(i, j);
  }
  for (double& v : sum) v /= double(used);
  out.map = Heatmap::from_raw(first.h, first.w, std::move(sum), geometry_for(model));
  return out;
}

TopPatch top_patch(const PatchGrid& grid, const PatchGeometry& geometry) {
  TopPatch t;
  t.predicted = aggregate(grid).label;
  t.confidence = -1.0;
  for (std::size_t i = 0; i < grid.h; ++i)
    for (std::size_t j = 0; j < grid.w; ++j) {
      const double p = grid.prob(t.predicted, i, j);
      if (p > t.confidence) {
        t.confidence = p;
        t.i = i;
        t.j = j;
      }
    }
  t.box = geometry.box(t.i, t.j);
  return t;
}

TopPatch top_patch(Classifier& model, const ImageBuffer& image) {
  return top_patch(predict_one(model, image), geometry_for(model));
}

double mask_contrast(const Heatmap& map, const ImageBuffer& mask) {
  if (mask.width != map.geometry.image_w || mask.height != map.geometry.image_h)
    throw StructuralError("mask size does not match the heatmap's image");
  const ImageBuffer heat = map.pixel_heat();
  double in = 0, out = 0;
  std::size_t n_in = 0, n_out = 0;
  for (std::size_t y = 0; y < mask.height; ++y)
    for (std::size_t x = 0; x < mask.width; ++x) {
      const double v = heat.at(0, y, x);
      if (mask.at(0, y, x) > 0.5f) {
        in += v;
        ++n_in;
      } else {
        out += v;
        ++n_out;
      }
    }
  if (n_in == 0 || n_out == 0) throw DataError("mask must have pixels on both sides");
  return in / double(n_in) - out / double(n_out);
}

LocalizationStats localization(Classifier& model, const LoadedSplit& split) {
  ImageSet fakes;
  fakes.native = split.images.native;
  std::vector<ImageBuffer> masks;
  for (std::size_t n = 0; n < split.manifest.records.size(); ++n) {
    const auto& r = split.manifest.records[n];
    if (r.label != kFake || r.mask_path.empty()) continue;
    ImageBuffer m = read_png(split.manifest.resolve(r.mask_path));
    if (m.width != model.native || m.height != model.native) m = nearest_resize(m, model.native, model.native);
    masks.push_back(std::move(m));
    fakes.images.push_back(split.images.images[n]);
    fakes.labels.push_back(kFake);
  }
  if (masks.empty()) throw DataError("no masked fakes in the split");

  const PatchGeometry geo{model.geometry(), model.native, model.native};
  const auto grids = predict(model, fakes);
  LocalizationStats st;
  st.images = masks.size();
  for (std::size_t n = 0; n < grids.size(); ++n) {
    st.contrasts.push_back(mask_contrast(heatmap_from_grid(grids[n], geo), masks[n]));
    const auto top = top_patch(grids[n], geo);
    const auto [cy, cx] = geo.center(top.i, top.j);
    const auto y = std::size_t(std::clamp<long>(std::lround(cy), 0, long(geo.image_h) - 1));
    const auto x = std::size_t(std::clamp<long>(std::lround(cx), 0, long(geo.image_w) - 1));
    st.hits.push_back(masks[n].at(0, y, x) > 0.5f);
  }
  st.mean_contrast = std::accumulate(st.contrasts.begin(), st.contrasts.end(), 0.0) / double(st.images);
  st.top_in_mask = double(std::count(st.hits.begin(), st.hits.end(), true)) / double(st.images);
  return st;
}

void export_heatmap(const Heatmap& map, const std::filesystem::path& png, std::size_t scale) {
  scale = std::max<std::size_t>(scale, 1);
  ImageBuffer img(map.w * scale, map.h * scale, 1);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      img.at(0, y, x) = static_cast<float>(map.normalized[(y / scale) * map.w + x / scale]);
  if (png.has_parent_path()) std::filesystem::create_directories(png.parent_path());
  write_png(img, png);

  nlohmann::json j;
  j["grid"] = {{"h", map.h}, {"w", map.w}};
  j["normalization"] = {{"min", map.min}, {"max", map.max}};
  j["geometry"] = {{"rf", map.geometry.rf.rf},
                   {"jump", map.geometry.rf.jump},
                   {"start", map.geometry.rf.start},
                   {"image_h", map.geometry.image_h},
                   {"image_w", map.geometry.image_w}};
  j["raw"] = map.raw;
  j["scale"] = scale;
  auto sidecar = png;
  sidecar.replace_extension(".json");
  std::ofstream f(sidecar);
  if (!f) throw IoError("cannot write " + sidecar.string());
  f << j.dump(2) << '\n';
}

}  // namespace pf
