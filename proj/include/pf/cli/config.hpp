#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "pf/adversary/gan.hpp"
#include "pf/analysis/cluster.hpp"
#include "pf/analysis/exaggerate.hpp"
#include "pf/forensics/train.hpp"
#include "pf/pipeline/synth.hpp"

namespace pf::cli {

struct AnalysisConfig {
  std::size_t k = 100;               // images per class in the average heatmap
  std::size_t heatmap_images = 16;   // per-image heatmaps exported
  ClusterMode cluster_mode = ClusterMode::top;
  ExaggerateConfig exaggerate;
  std::size_t samples = 8;           // exaggerated samples rendered
  Split split = Split::test;         // split that eval/heatmap/clusters read
};

struct InputPaths {
  std::string manifest;   // existing dataset; empty: synthesize from [dataset]
  std::string model;      // classifier checkpoint
  std::string generator;  // adversary directory
};

// Every setting of one experiment. Module seeds are not stored: they derive
// from `seed`, so the resolved config plus the seed fix every artifact.
struct ExperimentConfig {
  SynthConfig dataset;
  BackboneSpec backbone{BackboneFamily::xception, 2};
  std::size_t native = 64;
  TrainConfig training;
  AnalysisConfig analysis;
  GanConfig gan;
  EvasionConfig evasion;
  ReprojectConfig reproject;
  std::size_t evade_eval_samples = 200;  // generator samples scored before and after evasion
  InputPaths inputs;
  std::uint64_t seed = 0;
  std::string out;

  void validate() const;
};

// "section.key" names of every setting, in file order.
std::vector<std::string> config_keys();

std::string get_value(const ExperimentConfig& cfg, const std::string& key);
// Throws ConfigError for an unknown key or an unparsable value.
void set_value(ExperimentConfig& cfg, const std::string& key, const std::string& value);

// INI text: [section] headers and key = value lines; '#' or ';' comments.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string format_config(const ExperimentConfig& cfg);
void save_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

// Stream ids for mix_seed(cfg.seed, id).
enum SeedStream : std::uint64_t {
  kSeedSynth = 1,
  kSeedModel = 2,
  kSeedTrain = 3,
  kSeedClusters = 4,
  kSeedExaggerate = 5,
  kSeedGan = 6,
  kSeedEvade = 7,
  kSeedReproject = 8,
  kSeedSamples = 9,
  kSeedSelftest = 10,
};

}  // namespace pf::cli
