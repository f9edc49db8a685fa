#include "mpl/prompts.hpp"

#include <cmath>
#include <numeric>
#include <string>

#include "mpl/error.hpp"
#include "mpl/ops.hpp"

namespace mpl {

namespace {

// Re-raises a library error with the failing layer prepended, keeping its
// category.
template <typename Fn>
auto with_layer(std::size_t layer, Fn&& fn) -> decltype(fn()) {
  const std::string where = "vision layer " + std::to_string(layer + 1) + ": ";
  try {
    return fn();
  } catch (const ScheduleError& e) {
    throw ScheduleError(where + e.what());
  } catch (const DimensionError& e) {
    throw DimensionError(where + e.what());
  } catch (const BoundsError& e) {
    throw BoundsError(where + e.what());
  } catch (const NumericError& e) {
    throw NumericError(where + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(where + e.what());
  }
}

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v), true);
}

}  // namespace

VisionBackbone VisionBackbone::init(const EncoderConfig& config,
                                    std::mt19937_64& rng) {
  config.validate_vision();
  VisionBackbone b;
  b.config = config;
  b.embed = PatchEmbedding::init(config, rng);
  b.stack = TransformerStack::init(config, rng);
  return b;
}

TextBackbone TextBackbone::init(const EncoderConfig& config,
                                std::vector<std::size_t> template_tokens,
                                std::mt19937_64& rng) {
  config.validate_text();
  for (std::size_t id : template_tokens) {
    if (id >= config.vocab_size) {
      throw VocabError("template token " + std::to_string(id) +
                       " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
  TextBackbone b;
  b.config = config;
  b.embed = TokenEmbedding::init(config, rng);
  b.stack = TransformerStack::init(config, rng);
  b.template_tokens = std::move(template_tokens);
  return b;
}

PromptState PromptState::empty(std::size_t width) {
  return PromptState{Tensor::zeros({0, width}), {}};
}

TextPromptParams TextPromptParams::init(std::size_t depth, std::size_t rows,
                                        std::size_t width,
                                        std::mt19937_64& rng) {
  if (depth > 0 && rows == 0) {
    throw ConfigError("text prompts need at least one row per layer");
  }
  TextPromptParams p;
  for (std::size_t i = 0; i < depth; ++i) {
    Tensor t = normal_tensor({rows, width}, kInitStd, rng);
    t.set_requires_grad(true);
    p.blocks.push_back(t);
  }
  return p;
}

CouplingParams CouplingParams::init(const PromptSchedule& schedule,
                                    std::size_t text_width,
                                    std::size_t vision_width,
                                    std::mt19937_64& rng) {
  CouplingParams c;
  c.vision_width = vision_width;
  const double bound = 1.0 / std::sqrt(static_cast<double>(text_width));
  for (std::size_t i = 0; i < schedule.depth(); ++i) {
    const std::size_t out = schedule.entry(i).add * vision_width;
    c.weights.push_back(uniform_tensor({text_width, out}, bound, rng));
    c.biases.push_back(uniform_tensor({1, out}, bound, rng));
  }
  return c;
}

CouplingParams CouplingParams::zeros(const PromptSchedule& schedule,
                                     std::size_t text_width,
                                     std::size_t vision_width) {
  CouplingParams c;
  c.vision_width = vision_width;
  for (std::size_t i = 0; i < schedule.depth(); ++i) {
    const std::size_t out = schedule.entry(i).add * vision_width;
    c.weights.push_back(Tensor::zeros({text_width, out}, true));
    c.biases.push_back(Tensor::zeros({1, out}, true));
  }
  return c;
}

Tensor apply_add(const PromptState& state, const Tensor& new_prompts,
                 const Tensor& tokens, const ScheduleEntry& entry) {
  if (new_prompts.rows() != entry.add) {
    throw ScheduleError("add expects " + std::to_string(entry.add) +
                        " new prompts, got " +
                        std::to_string(new_prompts.rows()));
  }
  if (new_prompts.cols() != tokens.cols() ||
      state.carried.cols() != tokens.cols()) {
    throw DimensionError("add: prompt width does not match token width " +
                         std::to_string(tokens.cols()));
  }
  if (entry.add == 0 && state.count() == 0) return tokens;
  return concat_rows({new_prompts, state.carried, tokens});
}

Tensor apply_remove(const Tensor& layer_out, const ScheduleEntry& entry,
                    const LayerLayout& layout) {
  if (layer_out.rows() != layout.rows) {
    throw ScheduleError("remove: layer output has " +
                        std::to_string(layer_out.rows()) + " rows, layout " +
                        std::to_string(layout.rows));
  }
  if (entry.remove > layout.inserted + layout.carried) {
    throw ScheduleError("remove " + std::to_string(entry.remove) +
                        " exceeds the " +
                        std::to_string(layout.inserted + layout.carried) +
                        " prompts present");
  }
  if (entry.remove > layout.inserted) {
    throw ScheduleError("remove " + std::to_string(entry.remove) +
                        " exceeds the " + std::to_string(layout.inserted) +
                        " prompts inserted at this layer");
  }
  if (entry.remove == 0) return layer_out;
  return slice_rows(layer_out, entry.remove, layer_out.rows());
}

CarryResult apply_carry(const Tensor& remaining, const ScheduleEntry& entry,
                        const LayerLayout& layout, PromptState previous) {
  const std::size_t prompts = layout.inserted - layout.removed + layout.carried;
  if (remaining.rows() != layout.rows - layout.removed ||
      remaining.rows() <= prompts) {
    throw ScheduleError("carry: " + std::to_string(remaining.rows()) +
                        " rows do not hold " + std::to_string(prompts) +
                        " prompts plus tokens");
  }
  CarryResult result;
  result.state.inserted_slots = std::move(previous.inserted_slots);
  std::vector<std::size_t> slots(layout.inserted);
  std::iota(slots.begin(), slots.end(), std::size_t{0});
  result.state.inserted_slots.push_back(std::move(slots));

  if (prompts == 0) {
    result.state.carried = Tensor::zeros({0, remaining.cols()});
    result.tokens = remaining;
    return result;
  }
  result.state.carried = entry.carry
                             ? slice_rows(remaining, 0, prompts)
                             : Tensor::zeros({0, remaining.cols()});
  result.tokens = slice_rows(remaining, prompts, remaining.rows());
  return result;
}

Tensor couple(const CouplingParams& params, const PromptSchedule& schedule,
              const Tensor& text_prompt, std::size_t layer) {
  if (layer >= schedule.depth() || layer >= params.weights.size()) {
    throw ScheduleError("coupling requested for layer " +
                        std::to_string(layer + 1) + " beyond prompt depth " +
                        std::to_string(schedule.depth()));
  }
  const std::size_t add = schedule.entry(layer).add;
  if (add == 0) return Tensor::zeros({0, params.vision_width});
  const Tensor flat =
      add_bias(matmul(text_prompt, params.weights[layer]), params.biases[layer]);
  return reshape(flat, {add, params.vision_width});
}

Tensor run_vision_encoder(const VisionBackbone& backbone,
                          const PromptSchedule& schedule,
                          const CouplingParams& coupling,
                          const TextPromptParams& text_prompts,
                          const Tensor& image, const VisionHooks* hooks) {
  const auto& layers = backbone.stack.layers;
  if (schedule.num_layers() != layers.size()) {
    throw ScheduleError("schedule covers " +
                        std::to_string(schedule.num_layers()) +
                        " layers, vision encoder has " +
                        std::to_string(layers.size()));
  }
  if (text_prompts.blocks.size() < schedule.depth()) {
    throw ScheduleError("prompt depth " + std::to_string(schedule.depth()) +
                        " needs that many text prompt blocks, have " +
                        std::to_string(text_prompts.blocks.size()));
  }
  const std::size_t width = backbone.config.width;
  Tensor tokens = patch_embed(backbone.embed, backbone.config, image);
  PromptState state = PromptState::empty(width);

  for (std::size_t i = 0; i < layers.size(); ++i) {
    const ScheduleEntry& entry = schedule.entry(i);
    with_layer(i, [&] {
      const Tensor fresh =
          i < schedule.depth()
              ? couple(coupling, schedule,
                       slice_rows(text_prompts.blocks[i], 0, 1), i)
              : Tensor::zeros({0, width});
      LayerLayout layout{i, entry.add, state.count(), entry.remove,
                         entry.add + state.count() + tokens.rows()};
      Tensor x = apply_add(state, fresh, tokens, entry);
      if (hooks && hooks->before_layer) x = hooks->before_layer(layout, x);
      Tensor out = encoder_layer_forward(layers[i], x);
      if (hooks && hooks->after_layer) out = hooks->after_layer(layout, out);
      const Tensor kept = apply_remove(out, entry, layout);
      CarryResult carried = apply_carry(kept, entry, layout, std::move(state));
      state = std::move(carried.state);
      tokens = std::move(carried.tokens);
      if (hooks && hooks->after_carry) hooks->after_carry(layout, state);
      return 0;
    });
  }
  return slice_rows(tokens, 0, 1);
}

Tensor run_text_encoder(const TextBackbone& backbone,
                        const TextPromptParams& prompts,
                        std::span<const std::size_t> class_tokens,
                        const TextHooks* hooks) {
  const auto& config = backbone.config;
  const auto& layers = backbone.stack.layers;
  if (prompts.blocks.size() > layers.size()) {
    throw ScheduleError("text prompt depth exceeds the text encoder layers");
  }
  if (class_tokens.empty()) throw DataError("class name has no tokens");
  const std::size_t m = prompts.rows();
  for (const auto& b : prompts.blocks) {
    if (b.rows() != m || b.cols() != config.width) {
      throw DimensionError("text prompt blocks must all be [" +
                           std::to_string(m) + " x " +
                           std::to_string(config.width) + "]");
    }
  }
  const std::size_t length =
      m + backbone.template_tokens.size() + class_tokens.size();
  if (length > config.max_seq_len) {
    throw LengthError("text sequence of " + std::to_string(length) +
                      " tokens exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }

  std::vector<std::size_t> words(backbone.template_tokens);
  words.insert(words.end(), class_tokens.begin(), class_tokens.end());
  Tensor x = token_embed(backbone.embed, config, words, m);
  if (m > 0) {
    x = concat_rows({add(prompts.blocks[0],
                         slice_rows(backbone.embed.positional, 0, m)),
                     x});
  }

  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (i > 0 && i < prompts.blocks.size()) {
      const Tensor rest = slice_rows(x, m, x.rows());
      const Tensor block =
          hooks && hooks->replacement
              ? hooks->replacement(i, slice_rows(x, 0, m), prompts.blocks[i])
              : prompts.blocks[i];
      x = concat_rows({block, rest});
    }
    x = encoder_layer_forward(layers[i], x);
  }
  return slice_rows(x, x.rows() - 1, x.rows());
}

}  // namespace mpl
