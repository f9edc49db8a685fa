#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mpl/prompts.hpp"
#include "mpl/schedule.hpp"
#include "mpl/tensor.hpp"
#include "mpl/transformer.hpp"

namespace mpl {

inline constexpr double kDefaultTemperature = 0.01;

struct ModelConfig {
  EncoderConfig text = default_text();
  EncoderConfig vision = default_vision();
  std::size_t embed_dim = 32;
  std::size_t text_prompt_rows = 1;
  double temperature = kDefaultTemperature;
  std::vector<std::size_t> template_tokens{1, 2, 3, 4};
  // Seeds the frozen stand-in backbone; prompt parameters are seeded per run.
  std::uint64_t backbone_seed = 1234;

  static EncoderConfig default_text();
  static EncoderConfig default_vision();
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ProjectionParams {
  Tensor text;   // [d_t x d]
  Tensor image;  // [d_v x d]
  Tensor text_norm_gain, text_norm_bias;
  Tensor image_norm_gain, image_norm_bias;
  double temperature = kDefaultTemperature;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Dual encoder with modular prompts. The backbone (both towers, embeddings,
// projections) is a seeded random stand-in for pretrained weights and stays
// frozen; text prompts and coupling weights are the trainable set.
class PromptedClip {
 public:
  static PromptedClip create(const ModelConfig& config,
                             const PromptSchedule& schedule,
                             std::uint64_t prompt_seed);

  const ModelConfig& config() const { return config_; }
  const PromptSchedule& schedule() const { return schedule_; }
  const VisionBackbone& vision() const { return vision_; }
  const TextBackbone& text() const { return text_; }
  const ProjectionParams& projection() const { return projection_; }
  const TextPromptParams& text_prompts() const { return text_prompts_; }
  const CouplingParams& coupling() const { return coupling_; }
  TextPromptParams& text_prompts() { return text_prompts_; }
  CouplingParams& coupling() { return coupling_; }

  std::vector<NamedTensor> trainable_parameters() const;
  std::vector<NamedTensor> frozen_parameters() const;
  std::size_t trainable_count() const;

  // Enables gradients on the backbone as well (diagnostics only).
  void unfreeze_backbone();

  // Deep copy; parameter tensors are not shared with the original.
  PromptedClip clone() const;

 private:
  ModelConfig config_;
  PromptSchedule schedule_ = PromptSchedule::none(1);
  VisionBackbone vision_;
  TextBackbone text_;
  ProjectionParams projection_;
  TextPromptParams text_prompts_;
  CouplingParams coupling_;
};

// u = f(x) / ||f(x)||, shape [1 x d].
Tensor encode_image(const PromptedClip& model, const Tensor& image,
                    const VisionHooks* hooks = nullptr);
// Stacked normalised class embeddings W, shape [C x d].
Tensor encode_texts(const PromptedClip& model,
                    std::span<const std::vector<std::size_t>> class_names);

// softmax(u W^T / tau) per row of u.
Tensor class_logits(const Tensor& u, const Tensor& w, double temperature);
Tensor predict_probs(const Tensor& u, const Tensor& w, double temperature);

// Mean negative log-probability of the labelled class.
Tensor cross_entropy_loss(const Tensor& probs,
                          std::span<const std::size_t> labels);

}  // namespace mpl
