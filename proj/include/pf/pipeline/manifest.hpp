#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "pf/pipeline/image.hpp"

namespace pf {

enum Label : int { kReal = 0, kFake = 1 };

enum class Split { train, val, test };
std::string to_string(Split s);
Split split_from_string(const std::string& name);

// Paths are relative to the manifest's directory; empty optional paths and
// an empty pair id mean "absent".
struct ImageRecord {
  std::string path;
  int label = kReal;
  std::string mask_path;
  std::string segmentation_path;
  std::string generator;
  std::string pair_id;
  Split split = Split::train;

  bool operator==(const ImageRecord&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;  // directory the record paths are relative to
  std::vector<ImageRecord> records;

  std::filesystem::path resolve(const std::string& relative) const { return root / relative; }
  DatasetManifest filter(Split split) const;
  std::size_t count(int label) const;
  bool has_pairs() const;

  // Structural checks: binary labels, each pair id links exactly one real
  // and one fake record, and no pair id spans two splits. With
  // `check_files`, every referenced path must exist.
  void validate(bool check_files) const;
};

// JSON-lines, one record per line.
DatasetManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

ImageBuffer load_record_image(const DatasetManifest& m, const ImageRecord& r);

}  // namespace pf
