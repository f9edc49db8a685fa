#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mpl {

// Prompt operations for one vision layer: insert `add` prompts at its input,
// drop the first `remove` of them from its output, and carry the survivors
// (together with previously carried prompts) into the next layer.
struct ScheduleEntry {
  std::size_t add = 0;
  std::size_t remove = 0;
  bool carry = true;

  bool operator==(const ScheduleEntry&) const = default;
};

// Per-layer prompt plan for the vision encoder. Always valid once built:
//   - remove <= add + carried_in at every layer, and removal only draws on
//     the layer's own inserted block (remove <= add);
//   - layers past `depth` neither add nor remove and always carry;
//   - carried counts follow q[i+1] = carry ? q[i] + add - remove : 0, q[0] = 0.
class PromptSchedule {
 public:
  // Throws ScheduleError naming the violated rule and layer (1-based).
  static PromptSchedule build(std::vector<ScheduleEntry> entries,
                              std::size_t depth);

  static PromptSchedule none(std::size_t num_layers);
  // Every layer inserts p prompts and drops all of them afterwards.
  static PromptSchedule deep_vpt(std::size_t p, std::size_t num_layers);
  // p prompts inserted once at layer 1 and carried through every layer.
  static PromptSchedule shallow(std::size_t p, std::size_t num_layers);
  // Layers 1..depth insert `add`, drop `remove`, and carry the rest.
  static PromptSchedule mpl(std::size_t add, std::size_t remove,
                            std::size_t depth, std::size_t num_layers);

  std::size_t num_layers() const { return entries_.size(); }
  std::size_t depth() const { return depth_; }
  const ScheduleEntry& entry(std::size_t layer) const {
    return entries_.at(layer);
  }
  const std::vector<ScheduleEntry>& entries() const { return entries_; }

  // Carried prompt counts entering each layer plus the count leaving the
  // last one (num_layers() + 1 values).
  std::vector<std::size_t> carried_counts() const;

  bool operator==(const PromptSchedule&) const = default;

 private:
  PromptSchedule(std::vector<ScheduleEntry> entries, std::size_t depth)
      : entries_(std::move(entries)), depth_(depth) {}

  std::vector<ScheduleEntry> entries_;
  std::size_t depth_ = 0;
};

// Analytic attention cost model for a schedule. Per layer with n tokens of
// width d:
//   attention scores and weighted values: kAttentionFlops * n^2 * d
//   q/k/v/o projections and the MLP:     projection_flops * n * d^2
// where projection_flops = 8 + 4 * mlp_ratio (24 for the default ratio).
struct ContextProfile {
  static constexpr double kAttentionFlops = 4.0;

  std::vector<std::size_t> lengths;      // tokens entering each layer
  std::vector<std::size_t> carried_in;   // carried prompts entering each layer
  std::vector<double> layer_cost;
  double quadratic_cost = 0.0;
  double linear_cost = 0.0;
  double total_cost = 0.0;
  double projection_flops = 24.0;
};

ContextProfile context_length_profile(const PromptSchedule& schedule,
                                      std::size_t num_patches,
                                      std::size_t width = 768,
                                      std::size_t mlp_ratio = 4);

}  // namespace mpl
