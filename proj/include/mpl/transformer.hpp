#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "mpl/tensor.hpp"

namespace mpl {

// Per-branch encoder geometry. The vision fields (image/patch) and text
// fields (vocabulary/sequence length) are ignored by the other branch.
struct EncoderConfig {
  std::size_t num_layers = 6;
  std::size_t num_heads = 4;
  std::size_t width = 48;
  std::size_t mlp_ratio = 4;

  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t patch_size = 4;

  std::size_t vocab_size = 64;
  std::size_t max_seq_len = 16;

  // Standard deviation of the random weight init (embeddings included).
  double init_std = 0.2;

  void validate_common() const;
  void validate_vision() const;
  void validate_text() const;
  bool operator==(const EncoderConfig&) const = default;

  std::size_t head_dim() const { return width / num_heads; }
  std::size_t grid_rows() const { return image_height / patch_size; }
  std::size_t grid_cols() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_rows() * grid_cols(); }
  std::size_t patch_pixels() const { return patch_size * patch_size * 3; }
};

inline constexpr double kInitStd = 0.02;

// Weights of one pre-norm encoder block. Projections act on rows:
// q = x Wq + bq, so every weight matrix is stored [in x out].
struct LayerParams {
  std::size_t num_heads = 1;
  Tensor w_q, b_q, w_k, b_k, w_v, b_v, w_o, b_o;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
  Tensor mlp_w1, mlp_b1, mlp_w2, mlp_b2;

  static LayerParams init(const EncoderConfig& config, std::mt19937_64& rng);
  static LayerParams zeros(const EncoderConfig& config);
  std::vector<Tensor> tensors() const;
};

// A stack of encoder blocks shared in shape by both branches.
struct TransformerStack {
  EncoderConfig config;
  std::vector<LayerParams> layers;

  static TransformerStack init(const EncoderConfig& config,
                               std::mt19937_64& rng);
  std::vector<Tensor> tensors() const;
};

struct TokenEmbedding {
  Tensor table;       // [vocab_size x width]
  Tensor positional;  // [max_seq_len x width]

  static TokenEmbedding init(const EncoderConfig& config,
                             std::mt19937_64& rng);
  std::vector<Tensor> tensors() const { return {table, positional}; }
};

struct PatchEmbedding {
  Tensor projection;   // [patch_pixels x width]
  Tensor class_token;  // [1 x width]
  Tensor positional;   // [(1 + num_patches) x width]

  static PatchEmbedding init(const EncoderConfig& config,
                             std::mt19937_64& rng);
  std::vector<Tensor> tensors() const {
    return {projection, class_token, positional};
  }
};

Tensor normal_tensor(Shape shape, double stddev, std::mt19937_64& rng);

Tensor multi_head_self_attention(const LayerParams& params, const Tensor& x);
Tensor mlp_block(const LayerParams& params, const Tensor& x);

// x + MSA(LN1(x)), then h + MLP(LN2(h)). Row count is preserved.
Tensor encoder_layer_forward(const LayerParams& params, const Tensor& x);

// Runs every layer of the stack with no prompt handling.
Tensor encoder_forward(const TransformerStack& stack, Tensor x);

// Non-overlapping patch_size x patch_size patches of an [H x W x 3] image,
// flattened in (row, col, channel) order, one patch per row, patches in
// row-major grid order.
Tensor extract_patches(const EncoderConfig& config, const Tensor& image);

// [class_token; patches * projection] + positional, shape (1 + xi) x width.
Tensor patch_embed(const PatchEmbedding& params, const EncoderConfig& config,
                   const Tensor& image);

// Table lookup plus positional rows first_position .. first_position+len-1.
Tensor token_embed(const TokenEmbedding& params, const EncoderConfig& config,
                   std::span<const std::size_t> tokens,
                   std::size_t first_position = 0);

}  // namespace mpl
