#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mpl/clip.hpp"
#include "mpl/dataset.hpp"
#include "mpl/gradcheck.hpp"
#include "mpl/schedule.hpp"
#include "mpl/train.hpp"

namespace mpl {

using Json = nlohmann::ordered_json;

inline constexpr std::string_view kVersion = "0.1.0";

enum class Protocol { plain, base_to_new, cross_dataset };

std::string_view protocol_name(Protocol p);

// Either a shorthand (mpl, deep_vpt, shallow, none) expanded against the
// model depth, or an explicit per-layer entry list.
struct ScheduleSpec {
  std::string kind = "mpl";
  std::size_t add = 2;
  std::size_t remove = 1;
  std::size_t depth = 2;
  std::size_t prompts = 2;  // deep_vpt and shallow
  std::vector<ScheduleEntry> entries;

  PromptSchedule build(std::size_t num_layers) const;
  bool operator==(const ScheduleSpec&) const = default;
};

struct DataSource {
  std::string name;
  std::optional<std::string> path;  // dataset directory; else synthetic
  SyntheticSpec synthetic;

  FewShotDataset load(const std::filesystem::path& base_dir) const;
  bool operator==(const DataSource&) const = default;
};

struct GradCheckConfig {
  std::size_t classes = 3;
  std::size_t samples = 1;
  double eps = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_parameters = 10000;

  bool operator==(const GradCheckConfig&) const = default;
};

struct ExperimentConfig {
  ModelConfig model;
  ScheduleSpec schedule;
  TrainConfig train;
  Protocol protocol = Protocol::plain;
  DataSource train_data{"train", std::nullopt, {}};
  std::vector<DataSource> eval_data;
  std::vector<std::uint64_t> seeds{0};
  std::string output;
  GradCheckConfig gradcheck;
  // Relative dataset paths resolve against this directory. Not serialised.
  std::filesystem::path base_dir;

  void validate() const;
  PromptSchedule build_schedule() const;
  bool operator==(const ExperimentConfig&) const = default;
};

// Syntax errors report line and column; semantic errors name the field
// path (e.g. "train.lr"). Both throw ConfigError.
ExperimentConfig parse_config(std::string_view text,
                              const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& file);
Json config_to_json(const ExperimentConfig& config);

ScheduleSpec parse_schedule_spec(std::string_view text);
ScheduleSpec load_schedule_spec(const std::filesystem::path& file);
Json schedule_spec_to_json(const ScheduleSpec& spec);

struct SeedRun {
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, Metrics>> metrics;
  double wall_time_seconds = 0.0;

  const Metrics& at(std::string_view name) const;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single value
};

Summary summarize(std::span<const double> values);

struct Report {
  ExperimentConfig config;
  std::size_t trainable_parameters = 0;
  ContextProfile profile;
  std::vector<SeedRun> runs;
  double wall_time_seconds = 0.0;
  std::string generated_at;

  Summary accuracy(std::string_view metric) const;
};

// Runs the configured protocol once per seed. The seed drives the prompt
// init, the few-shot draw and the batch order; the backbone is fixed by
// model.backbone_seed.
Report run_experiment(const ExperimentConfig& config);
Json report_to_json(const Report& report);

// Removes generated_at and every wall_time_seconds field.
Json strip_timestamps(Json report);

struct GradCheckReport {
  GradCheckResult result;
  std::size_t parameters = 0;
  std::vector<std::string> names;
  bool passed = false;
  double wall_time_seconds = 0.0;
};

// Central-difference check of every trainable parameter of the assembled
// model on a small batch drawn from the training data.
GradCheckReport run_gradcheck(const ExperimentConfig& config);

Json profile_to_json(const PromptSchedule& schedule,
                     const ContextProfile& profile);
std::string format_profile(const PromptSchedule& schedule,
                           const ContextProfile& profile);

void write_json(const Json& doc, const std::filesystem::path& file);

}  // namespace mpl
