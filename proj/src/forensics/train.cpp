#include "pf/forensics/train.hpp"

#include <fstream>

#include "json.hpp"
#include "pf/diffcore/ops.hpp"

namespace pf {

void TrainConfig::validate() const {
  if (batch_size < 2 || batch_size % 2) throw ConfigError("batch size must be even and at least 2");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (patience_factor < 1) throw ConfigError("patience factor must be at least 1");
  if (patience_multiplier < 0) throw ConfigError("patience multiplier must be non-negative");
  if (max_epochs < 0) throw ConfigError("max epochs must be non-negative");
}

TrainResult train(Classifier& model, const LoadedSplit& train_set, const LoadedSplit& val_set, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (train_set.images.size() == 0 || val_set.images.size() == 0) throw DataError("training needs nonempty train and validation sets");
  BatchSampler sampler(train_set.manifest, cfg.batch_size, cfg.seed);
  Rng aug_rng(cfg.seed ^ 0xA5A5A5A5A5A5A5A5ULL);
  Adam<float> adam({.lr = cfg.lr});
  const int patience = cfg.patience(model.spec);

  TrainResult result;
  StateDict<float> best = model.graph.state();
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    model.graph.set_training(true);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (const auto& idx : sampler.next_epoch()) {
      const Tensor<float> x = make_batch(train_set.images, idx, cfg.augment, aug_rng);
      std::vector<int> labels;
      for (auto i : idx) labels.push_back(train_set.images.labels[i]);
      const auto& logits = model.graph.forward(x);
      const auto loss = location_cross_entropy(logits, labels);
      result.clamp_events += loss.clamped;
      model.graph.zero_grad();
      model.graph.backward(loss.grad);
      adam.step(model.graph.parameters());
      loss_sum += loss.loss;
      ++batches;
    }
    const EpochRecord rec{epoch, loss_sum / double(batches), raw_patch_accuracy(model, val_set.images)};
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (result.best_epoch == 0 || rec.val_patch_acc > result.best_val_patch_acc) {
      result.best_epoch = epoch;
      result.best_val_patch_acc = rec.val_patch_acc;
      best = model.graph.state();
      since_best = 0;
    } else if (++since_best >= patience) {
      result.stopped_early = true;
      break;
    }
  }
  model.graph.load_state(best);
  model.graph.zero_grad();
  model.graph.set_training(false);
  return result;
}

void write_history(const std::vector<EpochRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write history '" + path.string() + "'");
  for (const auto& r : history) {
    const nlohmann::json j = {{"epoch", r.epoch}, {"train_loss", r.train_loss}, {"val_patch_acc", r.val_patch_acc}};
    out << j.dump() << '\n';
  }
}

}  // namespace pf
