#include "mpl/schedule.hpp"

#include <string>

#include "mpl/error.hpp"

namespace mpl {

namespace {

std::string at_layer(std::size_t i) {
  return "schedule layer " + std::to_string(i + 1) + ": ";
}

}  // namespace

PromptSchedule PromptSchedule::build(std::vector<ScheduleEntry> entries,
                                     std::size_t depth) {
  if (entries.empty()) {
    throw ScheduleError("schedule must cover at least one layer");
  }
  if (depth > entries.size()) {
    throw ScheduleError("prompt depth " + std::to_string(depth) +
                        " exceeds the " + std::to_string(entries.size()) +
                        " encoder layers");
  }
  std::size_t carried = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const ScheduleEntry& e = entries[i];
    if (i >= depth) {
      if (e.add != 0 || e.remove != 0) {
        throw ScheduleError(at_layer(i) +
                            "invariant 'add = remove = 0 beyond prompt "
                            "depth' violated (depth " +
                            std::to_string(depth) + ")");
      }
      if (!e.carry) {
        throw ScheduleError(at_layer(i) +
                            "invariant 'carry beyond prompt depth' violated: "
                            "carried prompts persist past depth " +
                            std::to_string(depth));
      }
    }
    if (e.remove > e.add + carried) {
      throw ScheduleError(
          at_layer(i) + "invariant 'remove <= inserted + carried' violated: "
          "remove " + std::to_string(e.remove) + " > " +
          std::to_string(e.add) + " inserted + " + std::to_string(carried) +
          " carried");
    }
    if (e.remove > e.add) {
      throw ScheduleError(
          at_layer(i) + "invariant 'remove <= inserted' violated: removal "
          "draws only on the layer's own " + std::to_string(e.add) +
          " inserted prompts, remove is " + std::to_string(e.remove));
    }
    carried = e.carry ? carried + e.add - e.remove : 0;
  }
  return PromptSchedule(std::move(entries), depth);
}

PromptSchedule PromptSchedule::none(std::size_t num_layers) {
  return build(std::vector<ScheduleEntry>(num_layers), 0);
}

PromptSchedule PromptSchedule::deep_vpt(std::size_t p, std::size_t num_layers) {
  return build(std::vector<ScheduleEntry>(num_layers, {p, p, false}),
               num_layers);
}

PromptSchedule PromptSchedule::shallow(std::size_t p, std::size_t num_layers) {
  std::vector<ScheduleEntry> entries(num_layers);
  if (!entries.empty()) entries[0] = {p, 0, true};
  return build(std::move(entries), 1);
}

PromptSchedule PromptSchedule::mpl(std::size_t add, std::size_t remove,
                                   std::size_t depth, std::size_t num_layers) {
  if (depth > num_layers) {
    throw ScheduleError("prompt depth " + std::to_string(depth) +
                        " exceeds the " + std::to_string(num_layers) +
                        " encoder layers");
  }
  std::vector<ScheduleEntry> entries(num_layers);
  for (std::size_t i = 0; i < depth; ++i) entries[i] = {add, remove, true};
  return build(std::move(entries), depth);
}

std::vector<std::size_t> PromptSchedule::carried_counts() const {
  std::vector<std::size_t> q(entries_.size() + 1, 0);
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    q[i + 1] = e.carry ? q[i] + e.add - e.remove : 0;
  }
  return q;
}

ContextProfile context_length_profile(const PromptSchedule& schedule,
                                      std::size_t num_patches,
                                      std::size_t width,
                                      std::size_t mlp_ratio) {
  ContextProfile p;
  p.projection_flops = 8.0 + 4.0 * static_cast<double>(mlp_ratio);
  const auto q = schedule.carried_counts();
  const double d = static_cast<double>(width);
  for (std::size_t i = 0; i < schedule.num_layers(); ++i) {
    const std::size_t n = schedule.entry(i).add + q[i] + 1 + num_patches;
    const double nd = static_cast<double>(n);
    const double quad = ContextProfile::kAttentionFlops * nd * nd * d;
    const double lin = p.projection_flops * nd * d * d;
    p.lengths.push_back(n);
    p.carried_in.push_back(q[i]);
    p.layer_cost.push_back(quad + lin);
    p.quadratic_cost += quad;
    p.linear_cost += lin;
  }
  p.total_cost = p.quadratic_cost + p.linear_cost;
  return p;
}

}  // namespace mpl
