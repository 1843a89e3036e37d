#include "pf/pipeline/manifest.hpp"

#include <fstream>
#include <map>

#include "json.hpp"

namespace pf {

using nlohmann::json;

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  throw DataError("unknown split '" + name + "'");
}

DatasetManifest DatasetManifest::filter(Split split) const {
  DatasetManifest out{root, {}};
  for (const auto& r : records)
    if (r.split == split) out.records.push_back(r);
  return out;
}

std::size_t DatasetManifest::count(int label) const {
  std::size_t n = 0;
  for (const auto& r : records) n += r.label == label;
  return n;
}

bool DatasetManifest::has_pairs() const {
  for (const auto& r : records)
    if (!r.pair_id.empty()) return true;
  return false;
}

void DatasetManifest::validate(bool check_files) const {
  struct PairInfo {
    int reals = 0, fakes = 0;
    Split split;
  };
  std::map<std::string, PairInfo> pairs;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    const std::string where = "record " + std::to_string(i) + " ('" + r.path + "')";
    if (r.label != kReal && r.label != kFake) throw DataError(where + ": label must be 0 (real) or 1 (fake)");
    if (check_files) {
      for (const auto* p : {&r.path, &r.mask_path, &r.segmentation_path})
        if (!p->empty() && !std::filesystem::exists(resolve(*p)))
          throw DataError(where + ": missing file '" + resolve(*p).string() + "'");
    }
    if (r.pair_id.empty()) continue;
    auto [it, fresh] = pairs.try_emplace(r.pair_id, PairInfo{0, 0, r.split});
    if (!fresh && it->second.split != r.split)
      throw DataError("pair '" + r.pair_id + "' appears in splits " + to_string(it->second.split) + " and " +
                      to_string(r.split));
    (r.label == kReal ? it->second.reals : it->second.fakes) += 1;
  }
  for (const auto& [id, p] : pairs)
    if (p.reals != 1 || p.fakes != 1)
      throw DataError("pair '" + id + "' links " + std::to_string(p.reals) + " real and " + std::to_string(p.fakes) +
                      " fake records (expected 1 and 1)");
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  DatasetManifest m;
  m.root = path.parent_path();
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const json j = json::parse(line);
      ImageRecord r;
      r.path = j.at("path").get<std::string>();
      r.label = j.at("label").get<int>();
      r.mask_path = j.value("mask", "");
      r.segmentation_path = j.value("segmentation", "");
      r.generator = j.value("generator", "");
      r.pair_id = j.value("pair_id", "");
      r.split = split_from_string(j.value("split", "train"));
      m.records.push_back(std::move(r));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  m.validate(true);
  return m;
}

void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest '" + path.string() + "'");
  for (const auto& r : manifest.records) {
    json j = {{"path", r.path}, {"label", r.label}};
    if (!r.mask_path.empty()) j["mask"] = r.mask_path;
    if (!r.segmentation_path.empty()) j["segmentation"] = r.segmentation_path;
    j["generator"] = r.generator;
    if (!r.pair_id.empty()) j["pair_id"] = r.pair_id;
    j["split"] = to_string(r.split);
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("failed writing manifest '" + path.string() + "'");
}

ImageBuffer load_record_image(const DatasetManifest& m, const ImageRecord& r) { return read_png(m.resolve(r.path)); }

}  // namespace pf
