#include "mpl/transformer.hpp"

#include <cmath>
#include <string>

#include "mpl/error.hpp"
#include "mpl/ops.hpp"

namespace mpl {

namespace {

void require_positive(std::size_t v, const char* name) {
  if (v == 0) throw ConfigError(std::string(name) + " must be >= 1");
}

}  // namespace

void EncoderConfig::validate_common() const {
  require_positive(num_layers, "num_layers");
  require_positive(num_heads, "num_heads");
  require_positive(width, "width");
  require_positive(mlp_ratio, "mlp_ratio");
  if (width % num_heads != 0) {
    throw ConfigError("width " + std::to_string(width) +
                      " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
}

void EncoderConfig::validate_vision() const {
  validate_common();
  require_positive(patch_size, "patch_size");
  require_positive(image_height, "image_height");
  require_positive(image_width, "image_width");
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("image " + std::to_string(image_height) + "x" +
                      std::to_string(image_width) +
                      " is not divisible by patch size " +
                      std::to_string(patch_size));
  }
}

void EncoderConfig::validate_text() const {
  validate_common();
  require_positive(vocab_size, "vocab_size");
  require_positive(max_seq_len, "max_seq_len");
}

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = dist(rng);
  return Tensor(std::move(shape), std::move(v));
}

LayerParams LayerParams::init(const EncoderConfig& config,
                              std::mt19937_64& rng) {
  config.validate_common();
  const std::size_t d = config.width, h = d * config.mlp_ratio;
  LayerParams p;
  p.num_heads = config.num_heads;
  p.w_q = normal_tensor({d, d}, config.init_std, rng);
  p.w_k = normal_tensor({d, d}, config.init_std, rng);
  p.w_v = normal_tensor({d, d}, config.init_std, rng);
  p.w_o = normal_tensor({d, d}, config.init_std, rng);
  p.b_q = Tensor::zeros({1, d});
  p.b_k = Tensor::zeros({1, d});
  p.b_v = Tensor::zeros({1, d});
  p.b_o = Tensor::zeros({1, d});
  p.ln1_gain = Tensor::full({1, d}, 1.0);
  p.ln1_bias = Tensor::zeros({1, d});
  p.ln2_gain = Tensor::full({1, d}, 1.0);
  p.ln2_bias = Tensor::zeros({1, d});
  p.mlp_w1 = normal_tensor({d, h}, config.init_std, rng);
  p.mlp_b1 = Tensor::zeros({1, h});
  p.mlp_w2 = normal_tensor({h, d}, config.init_std, rng);
  p.mlp_b2 = Tensor::zeros({1, d});
  return p;
}

LayerParams LayerParams::zeros(const EncoderConfig& config) {
  config.validate_common();
  const std::size_t d = config.width, h = d * config.mlp_ratio;
  LayerParams p;
  p.num_heads = config.num_heads;
  for (Tensor* t : {&p.w_q, &p.w_k, &p.w_v, &p.w_o}) *t = Tensor::zeros({d, d});
  for (Tensor* t : {&p.b_q, &p.b_k, &p.b_v, &p.b_o, &p.ln1_gain, &p.ln1_bias,
                    &p.ln2_gain, &p.ln2_bias, &p.mlp_b2}) {
    *t = Tensor::zeros({1, d});
  }
  p.mlp_w1 = Tensor::zeros({d, h});
  p.mlp_b1 = Tensor::zeros({1, h});
  p.mlp_w2 = Tensor::zeros({h, d});
  return p;
}

std::vector<Tensor> LayerParams::tensors() const {
  return {w_q,      b_q,      w_k,      b_k,    w_v,    b_v,
          w_o,      b_o,      ln1_gain, ln1_bias, ln2_gain, ln2_bias,
          mlp_w1,   mlp_b1,   mlp_w2,   mlp_b2};
}

TransformerStack TransformerStack::init(const EncoderConfig& config,
                                        std::mt19937_64& rng) {
  config.validate_common();
  TransformerStack s;
  s.config = config;
  s.layers.reserve(config.num_layers);
  for (std::size_t i = 0; i < config.num_layers; ++i) {
    s.layers.push_back(LayerParams::init(config, rng));
  }
  return s;
}

std::vector<Tensor> TransformerStack::tensors() const {
  std::vector<Tensor> out;
  for (const auto& l : layers) {
    auto t = l.tensors();
    out.insert(out.end(), t.begin(), t.end());
  }
  return out;
}

TokenEmbedding TokenEmbedding::init(const EncoderConfig& config,
                                    std::mt19937_64& rng) {
  config.validate_text();
  TokenEmbedding e;
  e.table = normal_tensor({config.vocab_size, config.width}, config.init_std, rng);
  e.positional =
      normal_tensor({config.max_seq_len, config.width}, config.init_std, rng);
  return e;
}

PatchEmbedding PatchEmbedding::init(const EncoderConfig& config,
                                    std::mt19937_64& rng) {
  config.validate_vision();
  PatchEmbedding e;
  e.projection =
      normal_tensor({config.patch_pixels(), config.width}, config.init_std, rng);
  e.class_token = Tensor::zeros({1, config.width});
  e.positional =
      normal_tensor({1 + config.num_patches(), config.width}, config.init_std, rng);
  return e;
}

Tensor multi_head_self_attention(const LayerParams& params, const Tensor& x) {
  const std::size_t d = x.cols();
  if (params.num_heads == 0 || d % params.num_heads != 0) {
    throw ConfigError("width " + std::to_string(d) +
                      " is not divisible by num_heads " +
                      std::to_string(params.num_heads));
  }
  if (x.rows() == 0) throw DimensionError("attention over zero tokens");
  const std::size_t dh = d / params.num_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  const Tensor q = add_bias(matmul(x, params.w_q), params.b_q);
  const Tensor k = add_bias(matmul(x, params.w_k), params.b_k);
  const Tensor v = add_bias(matmul(x, params.w_v), params.b_v);

  std::vector<Tensor> heads;
  heads.reserve(params.num_heads);
  for (std::size_t h = 0; h < params.num_heads; ++h) {
    const Tensor qh = slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor kh = slice_cols(k, h * dh, (h + 1) * dh);
    const Tensor vh = slice_cols(v, h * dh, (h + 1) * dh);
    const Tensor weights =
        softmax_rows(scale(matmul(qh, transpose(kh)), inv_sqrt));
    heads.push_back(matmul(weights, vh));
  }
  const Tensor merged = params.num_heads == 1 ? heads[0] : concat_cols(heads);
  return add_bias(matmul(merged, params.w_o), params.b_o);
}

Tensor mlp_block(const LayerParams& params, const Tensor& x) {
  const Tensor hidden = gelu(add_bias(matmul(x, params.mlp_w1), params.mlp_b1));
  return add_bias(matmul(hidden, params.mlp_w2), params.mlp_b2);
}

Tensor encoder_layer_forward(const LayerParams& params, const Tensor& x) {
  const Tensor h = add(
      x, multi_head_self_attention(
             params, layernorm_rows(x, params.ln1_gain, params.ln1_bias)));
  return add(h, mlp_block(params,
                          layernorm_rows(h, params.ln2_gain, params.ln2_bias)));
}

Tensor encoder_forward(const TransformerStack& stack, Tensor x) {
  for (const auto& layer : stack.layers) x = encoder_layer_forward(layer, x);
  return x;
}

Tensor extract_patches(const EncoderConfig& config, const Tensor& image) {
  config.validate_vision();
  const Shape expected{config.image_height, config.image_width, 3};
  if (image.shape() != expected) {
    throw ConfigError("image shape " + shape_str(image.shape()) +
                      " does not match configured " + shape_str(expected));
  }
  const std::size_t ps = config.patch_size, w = config.image_width;
  const std::size_t gr = config.grid_rows(), gc = config.grid_cols();
  const std::size_t pp = config.patch_pixels();
  const auto px = image.data();
  std::vector<double> out(gr * gc * pp);
  for (std::size_t r = 0; r < gr; ++r) {
    for (std::size_t c = 0; c < gc; ++c) {
      double* dst = out.data() + (r * gc + c) * pp;
      for (std::size_t y = 0; y < ps; ++y) {
        const double* src = px.data() + ((r * ps + y) * w + c * ps) * 3;
        std::copy_n(src, ps * 3, dst + y * ps * 3);
      }
    }
  }
  return Tensor({gr * gc, pp}, std::move(out));
}

Tensor patch_embed(const PatchEmbedding& params, const EncoderConfig& config,
                   const Tensor& image) {
  const Tensor patches = extract_patches(config, image);
  const Tensor tokens =
      concat_rows({params.class_token, matmul(patches, params.projection)});
  return add(tokens, params.positional);
}

Tensor token_embed(const TokenEmbedding& params, const EncoderConfig& config,
                   std::span<const std::size_t> tokens,
                   std::size_t first_position) {
  if (first_position + tokens.size() > config.max_seq_len) {
    throw LengthError("sequence of " +
                      std::to_string(first_position + tokens.size()) +
                      " tokens exceeds max_seq_len " +
                      std::to_string(config.max_seq_len));
  }
  for (std::size_t id : tokens) {
    if (id >= config.vocab_size) {
      throw VocabError("token id " + std::to_string(id) +
                       " outside vocabulary of " +
                       std::to_string(config.vocab_size));
    }
  }
  return add(gather_rows(params.table, tokens),
             slice_rows(params.positional, first_position,
                        first_position + tokens.size()));
}

}  // namespace mpl
