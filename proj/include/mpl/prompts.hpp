#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "mpl/schedule.hpp"
#include "mpl/tensor.hpp"
#include "mpl/transformer.hpp"

namespace mpl {

struct VisionBackbone {
  EncoderConfig config;
  PatchEmbedding embed;
  TransformerStack stack;

  static VisionBackbone init(const EncoderConfig& config, std::mt19937_64& rng);
};

struct TextBackbone {
  EncoderConfig config;
  TokenEmbedding embed;
  TransformerStack stack;
  // Fixed word tokens placed between the learnable prompt and the class
  // name (the "a photo of a" part of the template).
  std::vector<std::size_t> template_tokens;

  static TextBackbone init(const EncoderConfig& config,
                           std::vector<std::size_t> template_tokens,
                           std::mt19937_64& rng);
};

// Carried prompt rows flowing into the next vision layer, plus the input row
// indices that each visited layer's inserted prompts occupied.
struct PromptState {
  Tensor carried;
  std::vector<std::vector<std::size_t>> inserted_slots;

  static PromptState empty(std::size_t width);
  std::size_t count() const { return carried.rows(); }
};

// Row layout of one vision layer's input:
// [inserted | carried | class token | patches].
struct LayerLayout {
  std::size_t layer = 0;  // 0-based
  std::size_t inserted = 0;
  std::size_t carried = 0;
  std::size_t removed = 0;
  std::size_t rows = 0;

  std::size_t class_row() const { return inserted + carried; }
};

// One learnable text prompt block per prompted layer, each [m x d_t].
// Block 0 also plays the role of the leading template word.
struct TextPromptParams {
  std::vector<Tensor> blocks;

  static TextPromptParams init(std::size_t depth, std::size_t rows,
                               std::size_t width, std::mt19937_64& rng);
  std::size_t rows() const { return blocks.empty() ? 0 : blocks[0].rows(); }
};

// Affine text-to-vision coupling per prompted layer. Layer i maps a
// [1 x d_t] text prompt to add_i vision prompts: weight [d_t x add_i*d_v],
// bias [1 x add_i*d_v].
struct CouplingParams {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  std::size_t vision_width = 0;

  static CouplingParams init(const PromptSchedule& schedule,
                             std::size_t text_width, std::size_t vision_width,
                             std::mt19937_64& rng);
  static CouplingParams zeros(const PromptSchedule& schedule,
                              std::size_t text_width,
                              std::size_t vision_width);
};

// Layer input [new_prompts; carried; tokens], tokens being [class; patches].
Tensor apply_add(const PromptState& state, const Tensor& new_prompts,
                 const Tensor& tokens, const ScheduleEntry& entry);

// Drops the first entry.remove rows (the head of the inserted block) from a
// layer output laid out as `layout`.
Tensor apply_remove(const Tensor& layer_out, const ScheduleEntry& entry,
                    const LayerLayout& layout);

struct CarryResult {
  PromptState state;
  Tensor tokens;  // [class; patches]
};

// Splits a post-removal output into surviving prompts and token rows. The
// survivors become the next carried block when entry.carry is set and are
// dropped otherwise.
CarryResult apply_carry(const Tensor& remaining, const ScheduleEntry& entry,
                        const LayerLayout& layout, PromptState previous);

// Vision prompts for a prompted layer, shape [add x d_v].
Tensor couple(const CouplingParams& params, const PromptSchedule& schedule,
              const Tensor& text_prompt, std::size_t layer);

// Optional observation/mutation points used by tests and diagnostics.
struct VisionHooks {
  std::function<Tensor(const LayerLayout&, const Tensor&)> before_layer;
  std::function<Tensor(const LayerLayout&, const Tensor&)> after_layer;
  std::function<void(const LayerLayout&, const PromptState&)> after_carry;
};

// Runs the vision tower under the schedule and returns the final class-token
// row [1 x d_v] (before the output norm and projection).
Tensor run_vision_encoder(const VisionBackbone& backbone,
                          const PromptSchedule& schedule,
                          const CouplingParams& coupling,
                          const TextPromptParams& text_prompts,
                          const Tensor& image,
                          const VisionHooks* hooks = nullptr);

struct TextHooks {
  // Supplies the prompt rows written into layer `layer` (> 0). Receives the
  // rows currently in that slot and the learned block.
  std::function<Tensor(std::size_t layer, const Tensor& current,
                       const Tensor& learned)>
      replacement;
};

// Layer-1 input is [T_1; e(template); e(class)] with positional embeddings;
// prompted layers i > 1 overwrite the leading m rows with T_i. Returns the
// final-position row [1 x d_t].
Tensor run_text_encoder(const TextBackbone& backbone,
                        const TextPromptParams& prompts,
                        std::span<const std::size_t> class_tokens,
                        const TextHooks* hooks = nullptr);

}  // namespace mpl
