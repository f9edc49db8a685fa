#include "mpl/clip.hpp"

#include <cmath>

#include "mpl/error.hpp"
#include "mpl/ops.hpp"

namespace mpl {

EncoderConfig ModelConfig::default_text() {
  EncoderConfig c;
  c.num_layers = 6;
  c.num_heads = 4;
  c.width = 32;
  c.vocab_size = 64;
  c.max_seq_len = 16;
  return c;
}

EncoderConfig ModelConfig::default_vision() {
  EncoderConfig c;
  c.num_layers = 6;
  c.num_heads = 4;
  c.width = 48;
  c.image_height = 16;
  c.image_width = 16;
  c.patch_size = 4;
  return c;
}

void ModelConfig::validate() const {
  text.validate_text();
  vision.validate_vision();
  if (embed_dim == 0) throw ConfigError("embed_dim must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (text.num_layers != vision.num_layers) {
    throw ConfigError("text and vision encoders must have the same depth");
  }
}

PromptedClip PromptedClip::create(const ModelConfig& config,
                                  const PromptSchedule& schedule,
                                  std::uint64_t prompt_seed) {
  config.validate();
  if (schedule.num_layers() != config.vision.num_layers) {
    throw ScheduleError("schedule covers " +
                        std::to_string(schedule.num_layers()) +
                        " layers, model has " +
                        std::to_string(config.vision.num_layers));
  }
  PromptedClip m;
  m.config_ = config;
  m.schedule_ = schedule;

  std::mt19937_64 backbone_rng(config.backbone_seed);
  m.vision_ = VisionBackbone::init(config.vision, backbone_rng);
  m.text_ = TextBackbone::init(config.text, config.template_tokens,
                               backbone_rng);
  const std::size_t d = config.embed_dim;
  m.projection_.image =
      normal_tensor({config.vision.width, d}, kInitStd, backbone_rng);
  m.projection_.text =
      normal_tensor({config.text.width, d}, kInitStd, backbone_rng);
  m.projection_.image_norm_gain = Tensor::full({1, config.vision.width}, 1.0);
  m.projection_.image_norm_bias = Tensor::zeros({1, config.vision.width});
  m.projection_.text_norm_gain = Tensor::full({1, config.text.width}, 1.0);
  m.projection_.text_norm_bias = Tensor::zeros({1, config.text.width});
  m.projection_.temperature = config.temperature;

  std::mt19937_64 prompt_rng(prompt_seed);
  m.text_prompts_ = TextPromptParams::init(
      schedule.depth(), config.text_prompt_rows, config.text.width, prompt_rng);
  m.coupling_ = CouplingParams::init(schedule, config.text.width,
                                     config.vision.width, prompt_rng);
  return m;
}

std::vector<NamedTensor> PromptedClip::trainable_parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < text_prompts_.blocks.size(); ++i) {
    out.push_back({"text_prompt." + std::to_string(i + 1),
                   text_prompts_.blocks[i]});
  }
  for (std::size_t i = 0; i < coupling_.weights.size(); ++i) {
    if (coupling_.weights[i].numel() == 0) continue;
    out.push_back({"coupling.weight." + std::to_string(i + 1),
                   coupling_.weights[i]});
    out.push_back({"coupling.bias." + std::to_string(i + 1),
                   coupling_.biases[i]});
  }
  return out;
}

std::vector<NamedTensor> PromptedClip::frozen_parameters() const {
  std::vector<NamedTensor> out;
  const auto add_all = [&out](const std::string& prefix,
                              const std::vector<Tensor>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) {
      out.push_back({prefix + "." + std::to_string(i), ts[i]});
    }
  };
  add_all("vision.embed", vision_.embed.tensors());
  add_all("vision.layers", vision_.stack.tensors());
  add_all("text.embed", text_.embed.tensors());
  add_all("text.layers", text_.stack.tensors());
  add_all("projection",
          {projection_.image, projection_.text, projection_.image_norm_gain,
           projection_.image_norm_bias, projection_.text_norm_gain,
           projection_.text_norm_bias});
  return out;
}

std::size_t PromptedClip::trainable_count() const {
  std::size_t n = 0;
  for (const auto& p : trainable_parameters()) n += p.tensor.numel();
  return n;
}

void PromptedClip::unfreeze_backbone() {
  for (auto& p : frozen_parameters()) p.tensor.set_requires_grad(true);
}

PromptedClip PromptedClip::clone() const {
  const auto copy_layer = [](const LayerParams& l) {
    LayerParams c = l;
    for (Tensor* t : {&c.w_q, &c.b_q, &c.w_k, &c.b_k, &c.w_v, &c.b_v, &c.w_o,
                      &c.b_o, &c.ln1_gain, &c.ln1_bias, &c.ln2_gain,
                      &c.ln2_bias, &c.mlp_w1, &c.mlp_b1, &c.mlp_w2,
                      &c.mlp_b2}) {
      *t = t->clone(t->requires_grad());
    }
    return c;
  };
  const auto deep = [](const Tensor& t) { return t.clone(t.requires_grad()); };

  PromptedClip m = *this;
  for (auto& l : m.vision_.stack.layers) l = copy_layer(l);
  for (auto& l : m.text_.stack.layers) l = copy_layer(l);
  for (Tensor* t : {&m.vision_.embed.projection, &m.vision_.embed.class_token,
                    &m.vision_.embed.positional, &m.text_.embed.table,
                    &m.text_.embed.positional, &m.projection_.text,
                    &m.projection_.image, &m.projection_.text_norm_gain,
                    &m.projection_.text_norm_bias,
                    &m.projection_.image_norm_gain,
                    &m.projection_.image_norm_bias}) {
    *t = deep(*t);
  }
  for (auto& t : m.text_prompts_.blocks) t = deep(t);
  for (auto& t : m.coupling_.weights) t = deep(t);
  for (auto& t : m.coupling_.biases) t = deep(t);
  return m;
}

Tensor encode_image(const PromptedClip& model, const Tensor& image,
                    const VisionHooks* hooks) {
  const Tensor cls =
      run_vision_encoder(model.vision(), model.schedule(), model.coupling(),
                         model.text_prompts(), image, hooks);
  const auto& proj = model.projection();
  const Tensor normed =
      layernorm_rows(cls, proj.image_norm_gain, proj.image_norm_bias);
  return l2_normalize_rows(matmul(normed, proj.image));
}

Tensor encode_texts(const PromptedClip& model,
                    std::span<const std::vector<std::size_t>> class_names) {
  if (class_names.size() < 2) {
    throw DataError("encode_texts needs at least two classes");
  }
  std::vector<Tensor> rows;
  rows.reserve(class_names.size());
  for (const auto& name : class_names) {
    rows.push_back(run_text_encoder(model.text(), model.text_prompts(), name));
  }
  const auto& proj = model.projection();
  const Tensor normed = layernorm_rows(concat_rows(rows), proj.text_norm_gain,
                                       proj.text_norm_bias);
  return l2_normalize_rows(matmul(normed, proj.text));
}

Tensor class_logits(const Tensor& u, const Tensor& w, double temperature) {
  if (!(temperature > 0.0)) {
    throw ConfigError("temperature must be > 0, got " +
                      std::to_string(temperature));
  }
  return scale(matmul(u, transpose(w)), 1.0 / temperature);
}

Tensor predict_probs(const Tensor& u, const Tensor& w, double temperature) {
  return softmax_rows(class_logits(u, w, temperature));
}

Tensor cross_entropy_loss(const Tensor& probs,
                          std::span<const std::size_t> labels) {
  if (labels.size() != probs.rows()) {
    throw DataError("cross_entropy_loss: " + std::to_string(labels.size()) +
                    " labels for " + std::to_string(probs.rows()) + " rows");
  }
  for (std::size_t y : labels) {
    if (y >= probs.cols()) {
      throw DataError("label " + std::to_string(y) + " outside [0, " +
                      std::to_string(probs.cols()) + ")");
    }
  }
  return scale(mean(log(take_per_row(probs, labels))), -1.0);
}

}  // namespace mpl
