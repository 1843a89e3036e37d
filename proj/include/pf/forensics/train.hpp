#pragma once

#include <filesystem>
#include <functional>
#include <vector>

#include "pf/diffcore/adam.hpp"
#include "pf/forensics/classifier.hpp"

namespace pf {

struct TrainConfig {
  std::size_t batch_size = 32;
  double lr = 0.001;
  // Early stopping waits patience_factor * p epochs without a strict
  // improvement of validation raw patch accuracy; p = 0 takes the
  // backbone's multiplier (50 / 20 / 10 by depth).
  int patience_factor = 5;
  int patience_multiplier = 0;
  int max_epochs = 100;
  std::uint64_t seed = 0;
  AugmentMode augment = AugmentMode::none;

  int patience(const BackboneSpec& spec) const {
    return patience_factor * (patience_multiplier > 0 ? patience_multiplier : spec.patience_multiplier());
  }
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_patch_acc = 0.0;
  bool operator==(const EpochRecord&) const = default;
};

struct TrainResult {
  std::vector<EpochRecord> history;
  int best_epoch = 0;  // 0 when no epoch ran
  double best_val_patch_acc = 0.0;
  std::size_t clamp_events = 0;  // patches whose log argument hit the clamp
  bool stopped_early = false;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Adam on the patch-averaged cross entropy. After every epoch the validation
// raw patch accuracy is recorded; the model is left holding the parameters
// and statistics of the best epoch.
TrainResult train(Classifier& model, const LoadedSplit& train_set, const LoadedSplit& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

// JSON-lines, one epoch per line.
void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path);

}  // namespace pf
