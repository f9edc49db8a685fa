#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "mpl/clip.hpp"
#include "mpl/dataset.hpp"

namespace mpl {

struct TrainConfig {
  std::size_t shots = 16;
  double lr = 3.5e-3;
  std::size_t epochs = 5;
  std::size_t batch_size_train = 4;
  std::size_t batch_size_eval = 100;
  // Defaults to one epoch, capped at half the run.
  std::optional<std::size_t> warmup_steps;
  double min_lr = 1e-5;
  double momentum = 0.0;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup from min_lr to lr over warmup_steps, then cosine decay that
// reaches min_lr on the last step (total_steps - 1).
struct LrSchedule {
  double lr = 3.5e-3;
  double min_lr = 1e-5;
  std::size_t warmup_steps = 0;
  std::size_t total_steps = 0;
};

LrSchedule make_lr_schedule(const TrainConfig& config,
                            std::size_t steps_per_epoch);
double lr_at_step(const LrSchedule& schedule, std::size_t step);

struct Metrics {
  double accuracy = 0.0;
  // Accuracy per class; classes without samples report 0.
  std::vector<double> per_class_accuracy;
  std::vector<double> loss_curve;  // one entry per optimizer step
  double wall_time_seconds = 0.0;
  std::vector<std::size_t> predictions;
};

struct TrainHooks {
  // Called after each epoch; returning false stops training early.
  std::function<bool(std::size_t epoch, const PromptedClip&)> on_epoch_end;
};

// SGD over shuffled mini-batches. Only the model's trainable parameters
// change. Returns the loss curve; accuracy is measured on `train_set` after
// the last step.
Metrics train(PromptedClip& model, const FewShotDataset& train_set,
              const TrainConfig& config, const TrainHooks* hooks = nullptr);

// Argmax of the cosine logits against the dataset's own class names.
Metrics evaluate(const PromptedClip& model, const FewShotDataset& ds,
                 std::size_t batch_size = 100);

struct PlainResult {
  Metrics train;
  Metrics heldout;
};

// Few-shot train on all classes, evaluate on the samples not drawn.
PlainResult plain_protocol(PromptedClip& model, const FewShotDataset& ds,
                           const TrainConfig& config,
                           const TrainHooks* hooks = nullptr);

struct BaseToNewResult {
  std::vector<std::size_t> base_classes;
  std::vector<std::size_t> new_classes;
  Metrics train;
  Metrics base;
  Metrics novel;
  double base_acc() const { return base.accuracy; }
  double new_acc() const { return novel.accuracy; }
};

// Classes sorted by id; the first ceil(C/2) are base, the rest new. Trains
// on base shots and evaluates each split with a classifier restricted to
// that split's classes.
BaseToNewResult base_to_new_protocol(PromptedClip& model,
                                     const FewShotDataset& ds,
                                     const TrainConfig& config);

struct CrossDatasetResult {
  Metrics train;
  std::vector<Metrics> evals;
};

// One training run on train_ds, then evaluation on every eval dataset with
// its own class names and no further updates.
CrossDatasetResult cross_dataset_protocol(
    PromptedClip& model, const FewShotDataset& train_ds,
    std::span<const FewShotDataset> eval_sets, const TrainConfig& config);

}  // namespace mpl
