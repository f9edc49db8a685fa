#include "mpl/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

#include "mpl/error.hpp"
#include "mpl/ops.hpp"

namespace mpl {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::size_t steps_per_epoch(std::size_t n, std::size_t batch) {
  return (n + batch - 1) / batch;
}

void require_same_geometry(const FewShotDataset& a, const FewShotDataset& b,
                           const std::string& what) {
  if (a.height != b.height || a.width != b.width) {
    throw DataError(what + ": image geometry " + std::to_string(b.height) +
                    "x" + std::to_string(b.width) + " differs from " +
                    std::to_string(a.height) + "x" + std::to_string(a.width));
  }
}

void require_model_geometry(const PromptedClip& model,
                            const FewShotDataset& ds) {
  const auto& v = model.config().vision;
  if (ds.height != v.image_height || ds.width != v.image_width) {
    throw DataError("dataset images are " + std::to_string(ds.height) + "x" +
                    std::to_string(ds.width) + ", model expects " +
                    std::to_string(v.image_height) + "x" +
                    std::to_string(v.image_width));
  }
}

}  // namespace

void TrainConfig::validate() const {
  if (shots == 0) throw ConfigError("train.shots must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("train.lr must be > 0");
  if (!(min_lr > 0.0) || min_lr > lr) {
    throw ConfigError("train.min_lr must be in (0, lr]");
  }
  if (batch_size_train == 0) throw ConfigError("train.batch_size must be >= 1");
  if (batch_size_eval == 0) {
    throw ConfigError("train.eval_batch_size must be >= 1");
  }
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("train.momentum must be in [0, 1)");
  }
  if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be >= 0");
}

LrSchedule make_lr_schedule(const TrainConfig& config,
                            std::size_t steps_per_epoch) {
  LrSchedule s;
  s.lr = config.lr;
  s.min_lr = config.min_lr;
  s.total_steps = steps_per_epoch * config.epochs;
  if (config.warmup_steps) {
    if (s.total_steps > 0 && *config.warmup_steps >= s.total_steps) {
      throw ConfigError("train.warmup_steps (" +
                        std::to_string(*config.warmup_steps) +
                        ") must be below the total step count " +
                        std::to_string(s.total_steps));
    }
    s.warmup_steps = *config.warmup_steps;
  } else {
    s.warmup_steps = std::min(steps_per_epoch, s.total_steps / 2);
  }
  return s;
}

double lr_at_step(const LrSchedule& s, std::size_t step) {
  if (step >= s.total_steps) {
    throw ContractError("lr step " + std::to_string(step) +
                        " outside schedule of " +
                        std::to_string(s.total_steps) + " steps");
  }
  if (step < s.warmup_steps) {
    return s.min_lr + (s.lr - s.min_lr) * static_cast<double>(step) /
                          static_cast<double>(s.warmup_steps);
  }
  const std::size_t span = s.total_steps - 1 - s.warmup_steps;
  if (span == 0) return s.lr;
  const double progress =
      static_cast<double>(step - s.warmup_steps) / static_cast<double>(span);
  return s.min_lr +
         0.5 * (s.lr - s.min_lr) * (1.0 + std::cos(std::numbers::pi * progress));
}

Metrics evaluate(const PromptedClip& model, const FewShotDataset& ds,
                 std::size_t batch_size) {
  const auto start = Clock::now();
  ds.validate();
  require_model_geometry(model, ds);
  if (batch_size == 0) throw ConfigError("evaluation batch size must be >= 1");

  NoGradGuard no_grad;
  const Tensor w = encode_texts(model, ds.class_names);
  const double tau = model.projection().temperature;
  const std::size_t c = ds.num_classes();

  Metrics m;
  m.predictions.reserve(ds.size());
  for (std::size_t first = 0; first < ds.size(); first += batch_size) {
    const std::size_t last = std::min(ds.size(), first + batch_size);
    std::vector<Tensor> rows;
    for (std::size_t i = first; i < last; ++i) {
      rows.push_back(encode_image(model, ds.image(i)));
    }
    const Tensor logits = class_logits(concat_rows(rows), w, tau);
    const auto v = logits.data();
    for (std::size_t r = 0; r < last - first; ++r) {
      const auto row = v.subspan(r * c, c);
      m.predictions.push_back(static_cast<std::size_t>(
          std::max_element(row.begin(), row.end()) - row.begin()));
    }
  }

  std::vector<std::size_t> hits(c, 0), counts(c, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    ++counts[ds.labels[i]];
    if (m.predictions[i] == ds.labels[i]) {
      ++hits[ds.labels[i]];
      ++correct;
    }
  }
  m.accuracy = ds.size() ? static_cast<double>(correct) /
                               static_cast<double>(ds.size())
                         : 0.0;
  m.per_class_accuracy.resize(c, 0.0);
  for (std::size_t k = 0; k < c; ++k) {
    if (counts[k]) {
      m.per_class_accuracy[k] =
          static_cast<double>(hits[k]) / static_cast<double>(counts[k]);
    }
  }
  m.wall_time_seconds = seconds_since(start);
  return m;
}

Metrics train(PromptedClip& model, const FewShotDataset& train_set,
              const TrainConfig& config, const TrainHooks* hooks) {
  const auto start = Clock::now();
  config.validate();
  train_set.validate();
  require_model_geometry(model, train_set);
  if (train_set.size() == 0) throw DataError("training set is empty");

  auto params = model.trainable_parameters();
  std::erase_if(params, [](const NamedTensor& p) { return p.tensor.numel() == 0; });
  if (params.empty()) throw ContractError("trainable set empty");

  const std::size_t per_epoch =
      steps_per_epoch(train_set.size(), config.batch_size_train);
  const LrSchedule schedule = make_lr_schedule(config, per_epoch);
  const double tau = model.projection().temperature;

  std::vector<std::vector<double>> velocity;
  for (const auto& p : params) velocity.emplace_back(p.tensor.numel(), 0.0);

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(train_set.size());
  Metrics m;
  std::size_t step = 0;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t first = 0; first < order.size();
         first += config.batch_size_train, ++step) {
      const std::size_t last =
          std::min(order.size(), first + config.batch_size_train);
      for (auto& p : params) p.tensor.zero_grad();

      std::vector<std::size_t> labels;
      Tensor loss;
      try {
        const Tensor w = encode_texts(model, train_set.class_names);
        std::vector<Tensor> rows;
        for (std::size_t k = first; k < last; ++k) {
          rows.push_back(encode_image(model, train_set.image(order[k])));
          labels.push_back(train_set.labels[order[k]]);
        }
        loss = cross_entropy_loss(predict_probs(concat_rows(rows), w, tau),
                                  labels);
      } catch (const NumericError& e) {
        throw TrainingAborted("step " + std::to_string(step) + ": " + e.what(),
                              static_cast<long>(step));
      }
      if (!std::isfinite(loss.item())) {
        throw TrainingAborted("non-finite loss at step " + std::to_string(step),
                              static_cast<long>(step));
      }
      loss.backward();
      m.loss_curve.push_back(loss.item());

      const double lr = lr_at_step(schedule, step);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto values = params[k].tensor.mutable_data();
        const auto grad = params[k].tensor.grad();
        if (grad.empty()) continue;
        auto& vel = velocity[k];
        for (std::size_t i = 0; i < values.size(); ++i) {
          double g = grad[i] + config.weight_decay * values[i];
          if (config.momentum > 0.0) {
            vel[i] = config.momentum * vel[i] + g;
            g = vel[i];
          }
          values[i] -= lr * g;
        }
      }
    }
    if (hooks && hooks->on_epoch_end && !hooks->on_epoch_end(epoch, model)) {
      break;
    }
  }

  const Metrics fit = evaluate(model, train_set, config.batch_size_eval);
  m.accuracy = fit.accuracy;
  m.per_class_accuracy = fit.per_class_accuracy;
  m.predictions = fit.predictions;
  m.wall_time_seconds = seconds_since(start);
  return m;
}

PlainResult plain_protocol(PromptedClip& model, const FewShotDataset& ds,
                           const TrainConfig& config, const TrainHooks* hooks) {
  const FewShotSplit split = split_few_shot(ds, config.shots, config.seed);
  PlainResult r;
  r.train = train(model, split.train, config, hooks);
  r.heldout = evaluate(model, split.holdout, config.batch_size_eval);
  return r;
}

BaseToNewResult base_to_new_protocol(PromptedClip& model,
                                     const FewShotDataset& ds,
                                     const TrainConfig& config) {
  ds.validate();
  const std::size_t c = ds.num_classes();
  if (c < 4) {
    throw DataError("base-to-new needs at least 4 classes, got " +
                    std::to_string(c));
  }
  BaseToNewResult r;
  const std::size_t n_base = (c + 1) / 2;
  for (std::size_t k = 0; k < c; ++k) {
    (k < n_base ? r.base_classes : r.new_classes).push_back(k);
  }
  const FewShotDataset base = subset_classes(ds, r.base_classes, "base");
  const FewShotDataset novel = subset_classes(ds, r.new_classes, "new");
  const FewShotSplit split = split_few_shot(base, config.shots, config.seed);

  r.train = train(model, split.train, config);
  r.base = evaluate(model, split.holdout, config.batch_size_eval);
  r.novel = evaluate(model, novel, config.batch_size_eval);
  return r;
}

CrossDatasetResult cross_dataset_protocol(
    PromptedClip& model, const FewShotDataset& train_ds,
    std::span<const FewShotDataset> eval_sets, const TrainConfig& config) {
  for (std::size_t i = 0; i < eval_sets.size(); ++i) {
    require_same_geometry(train_ds, eval_sets[i],
                          "evaluation dataset " + std::to_string(i));
  }
  CrossDatasetResult r;
  r.train = train(model, sample_few_shot(train_ds, config.shots, config.seed),
                  config);
  for (const auto& ds : eval_sets) {
    r.evals.push_back(evaluate(model, ds, config.batch_size_eval));
  }
  return r;
}

}  // namespace mpl
