#include <cmath>
#include <random>

#include "doctest.h"
#include "mpl/error.hpp"
#include "mpl/gradcheck.hpp"
#include "mpl/ops.hpp"
#include "mpl/transformer.hpp"
#include "support.hpp"

using namespace mpl;
using support::random_tensor;

namespace {

EncoderConfig small_config(std::size_t width = 8, std::size_t heads = 2) {
  EncoderConfig c;
  c.num_layers = 1;
  c.num_heads = heads;
  c.width = width;
  c.mlp_ratio = 2;
  c.image_height = 8;
  c.image_width = 8;
  c.patch_size = 4;
  c.vocab_size = 10;
  c.max_seq_len = 6;
  c.init_std = 0.3;
  return c;
}

void close_all(const Tensor& a, const support::Mat& b, double tol) {
  REQUIRE(a.rows() == b.size());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) CHECK(std::abs(a.at(r, c) - b[r][c]) < tol);
  }
}

// The key bias is left out: it shifts every score in a row equally, so its
// true gradient is exactly zero and only rounding noise remains.
std::vector<Tensor> enable_grads(LayerParams& p) {
  std::vector<Tensor> out;
  for (Tensor* t : {&p.w_q, &p.b_q, &p.w_k, &p.w_v, &p.b_v, &p.w_o, &p.b_o,
                    &p.ln1_gain, &p.ln1_bias, &p.ln2_gain, &p.ln2_bias, &p.mlp_w1,
                    &p.mlp_b1, &p.mlp_w2, &p.mlp_b2}) {
    t->set_requires_grad(true);
    out.push_back(*t);
  }
  return out;
}

// Small random perturbations so biases and norms are not at their init.
void jitter(LayerParams& p, std::mt19937_64& rng) {
  for (Tensor* t : {&p.b_q, &p.b_k, &p.b_v, &p.b_o, &p.ln1_gain, &p.ln1_bias,
                    &p.ln2_gain, &p.ln2_bias, &p.mlp_b1, &p.mlp_b2}) {
    auto v = t->mutable_data();
    std::normal_distribution<double> d(0.0, 0.1);
    for (double& x : v) x += d(rng);
  }
}

}  // namespace

TEST_CASE("config validation") {
  EncoderConfig c = small_config();
  c.num_heads = 3;
  CHECK_THROWS_AS(c.validate_common(), ConfigError);
  c = small_config();
  c.num_layers = 0;
  CHECK_THROWS_AS(c.validate_common(), ConfigError);
  c = small_config();
  c.patch_size = 3;
  CHECK_THROWS_AS(c.validate_vision(), ConfigError);
}

TEST_CASE("single-token attention is the value path") {
  std::mt19937_64 rng(1);
  const EncoderConfig c = small_config();
  LayerParams p = LayerParams::init(c, rng);
  jitter(p, rng);
  const Tensor x = random_tensor({1, 8}, rng);
  const Tensor got = multi_head_self_attention(p, x);
  const Tensor want = add_bias(matmul(add_bias(matmul(x, p.w_v), p.b_v), p.w_o), p.b_o);
  for (std::size_t j = 0; j < 8; ++j) CHECK(std::abs(got.at(0, j) - want.at(0, j)) < 1e-15);
}

TEST_CASE("attention is permutation-equivariant over rows") {
  std::mt19937_64 rng(2);
  const EncoderConfig c = small_config();
  LayerParams p = LayerParams::init(c, rng);
  jitter(p, rng);
  const Tensor x = random_tensor({6, 8}, rng);
  std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  const Tensor out = multi_head_self_attention(p, x);
  const Tensor out_perm = multi_head_self_attention(p, gather_rows(x, perm));
  for (std::size_t i = 0; i < perm.size(); ++i) {
    for (std::size_t j = 0; j < 8; ++j) {
      CHECK(std::abs(out_perm.at(i, j) - out.at(perm[i], j)) < 1e-13);
    }
  }
}

TEST_CASE("attention and layer match the plain-double reference") {
  std::mt19937_64 rng(3);
  const EncoderConfig c = small_config();
  LayerParams p = LayerParams::init(c, rng);
  jitter(p, rng);
  const Tensor x = random_tensor({5, 8}, rng);
  close_all(multi_head_self_attention(p, x), support::attention(p, support::to_mat(x)), 1e-13);
  close_all(encoder_layer_forward(p, x), support::layer(p, support::to_mat(x)), 1e-13);
}

TEST_CASE("attention rejects widths not divisible by heads") {
  std::mt19937_64 rng(4);
  LayerParams p = LayerParams::init(small_config(), rng);
  p.num_heads = 3;
  CHECK_THROWS_AS(multi_head_self_attention(p, random_tensor({2, 8}, rng)), ConfigError);
}

TEST_CASE("attention gradients on a 4x8 input with 2 heads") {
  std::mt19937_64 rng(5);
  LayerParams p = LayerParams::init(small_config(), rng);
  jitter(p, rng);
  Tensor x = random_tensor({4, 8}, rng, 1.0, true);
  const Tensor probe = random_tensor({4, 8}, rng);
  std::vector<Tensor> params = enable_grads(p);
  params.push_back(x);
  const auto result = finite_diff_check(
      [&] { return sum(mul(multi_head_self_attention(p, x), probe)); }, params);
  CHECK(result.max_rel_error < 1e-5);
}

TEST_CASE("layer with zero attention is input plus the MLP of the normed input") {
  std::mt19937_64 rng(6);
  const EncoderConfig c = small_config();
  LayerParams p = LayerParams::zeros(c);
  p.ln2_gain = Tensor::full({1, 8}, 1.0);
  p.mlp_w1 = random_tensor({8, 16}, rng, 0.5);
  p.mlp_w2 = random_tensor({16, 8}, rng, 0.5);
  p.mlp_b1 = random_tensor({1, 16}, rng, 0.1);
  const Tensor x = random_tensor({3, 8}, rng);
  const Tensor want = add(
      x, add_bias(matmul(gelu(add_bias(matmul(layernorm_rows(x), p.mlp_w1), p.mlp_b1)),
                         p.mlp_w2),
                  p.mlp_b2));
  CHECK(encoder_layer_forward(p, x).to_vector() == want.to_vector());
  // Fully zero parameters leave the input untouched.
  CHECK(encoder_layer_forward(LayerParams::zeros(c), x).to_vector() == x.to_vector());
}

TEST_CASE("layer preserves row count") {
  std::mt19937_64 rng(7);
  const LayerParams p = LayerParams::init(small_config(), rng);
  for (std::size_t n : {1u, 5u, 64u}) {
    CHECK(encoder_layer_forward(p, random_tensor({n, 8}, rng)).shape() == Shape{n, 8});
  }
}

TEST_CASE("layer gradient check") {
  std::mt19937_64 rng(8);
  LayerParams p = LayerParams::init(small_config(), rng);
  jitter(p, rng);
  Tensor x = random_tensor({3, 8}, rng, 1.0, true);
  const Tensor probe = random_tensor({3, 8}, rng);
  std::vector<Tensor> params = enable_grads(p);
  params.push_back(x);
  const auto result = finite_diff_check(
      [&] { return sum(mul(encoder_layer_forward(p, x), probe)); }, params);
  CHECK(result.max_rel_error < 1e-5);
}

TEST_CASE("every layer parameter receives a nonzero gradient") {
  std::mt19937_64 rng(9);
  LayerParams p = LayerParams::init(small_config(), rng);
  jitter(p, rng);
  const std::vector<Tensor> params = enable_grads(p);
  sum(mul(encoder_layer_forward(p, random_tensor({4, 8}, rng)),
          random_tensor({4, 8}, rng)))
      .backward();
  for (const auto& t : params) {
    double norm = 0.0;
    for (double g : t.grad()) norm += g * g;
    CHECK(norm > 0.0);
  }
}

TEST_CASE("key bias gradient vanishes") {
  std::mt19937_64 rng(16);
  LayerParams p = LayerParams::init(small_config(), rng);
  jitter(p, rng);
  p.b_k.set_requires_grad(true);
  sum(mul(encoder_layer_forward(p, random_tensor({4, 8}, rng)),
          random_tensor({4, 8}, rng)))
      .backward();
  for (double g : p.b_k.grad()) CHECK(std::abs(g) < 1e-14);
}

TEST_CASE("initialization follows the configured scale") {
  std::mt19937_64 rng(10);
  EncoderConfig c = small_config(64, 4);
  c.init_std = 0.02;
  const LayerParams p = LayerParams::init(c, rng);
  double s = 0.0;
  for (double v : p.w_q.data()) s += v * v;
  CHECK(std::sqrt(s / static_cast<double>(p.w_q.numel())) == doctest::Approx(0.02).epsilon(0.05));
  for (double v : p.ln1_gain.data()) CHECK(v == 1.0);
  for (double v : p.b_q.data()) CHECK(v == 0.0);
  const PatchEmbedding e = PatchEmbedding::init(c, rng);
  for (double v : e.class_token.data()) CHECK(v == 0.0);
}

TEST_CASE("patch_embed shape and zero image") {
  std::mt19937_64 rng(11);
  const EncoderConfig c = small_config();
  CHECK(c.num_patches() == 4);
  const PatchEmbedding e = PatchEmbedding::init(c, rng);
  const Tensor out = patch_embed(e, c, support::random_image(8, 8, rng));
  CHECK(out.shape() == Shape{5, 8});

  const Tensor zero = patch_embed(e, c, Tensor::zeros({8, 8, 3}));
  const Tensor want = add(concat_rows({e.class_token, Tensor::zeros({4, 8})}), e.positional);
  CHECK(zero.to_vector() == want.to_vector());
}

TEST_CASE("patch extraction matches pixel indexing on random 16x16 images") {
  std::mt19937_64 rng(12);
  EncoderConfig c = small_config();
  c.image_height = c.image_width = 16;
  for (int trial = 0; trial < 5; ++trial) {
    const Tensor img = support::random_image(16, 16, rng);
    const Tensor patches = extract_patches(c, img);
    REQUIRE(patches.shape() == Shape{16, 48});
    for (std::size_t p = 0; p < 16; ++p) {
      const std::size_t gy = p / 4, gx = p % 4;
      for (std::size_t k = 0; k < 48; ++k) {
        const std::size_t y = gy * 4 + k / 12, x = gx * 4 + (k % 12) / 3, ch = k % 3;
        CHECK(patches.at(p, k) == img.data()[(y * 16 + x) * 3 + ch]);
      }
    }
  }
}

TEST_CASE("patch_embed rejects images that do not match the config") {
  std::mt19937_64 rng(13);
  const EncoderConfig c = small_config();
  const PatchEmbedding e = PatchEmbedding::init(c, rng);
  CHECK_THROWS_AS(patch_embed(e, c, Tensor::zeros({8, 6, 3})), ConfigError);
  EncoderConfig bad = c;
  bad.image_width = 6;
  CHECK_THROWS_AS(bad.validate_vision(), ConfigError);
}

TEST_CASE("token_embed") {
  std::mt19937_64 rng(14);
  const EncoderConfig c = small_config();
  const TokenEmbedding e = TokenEmbedding::init(c, rng);
  const std::vector<std::size_t> one{3};
  CHECK(token_embed(e, c, one).shape() == Shape{1, 8});

  const std::vector<std::size_t> twice{7, 7};
  const Tensor t = token_embed(e, c, twice);
  for (std::size_t j = 0; j < 8; ++j) {
    CHECK(t.at(1, j) - t.at(0, j) ==
          doctest::Approx(e.positional.at(1, j) - e.positional.at(0, j)).epsilon(1e-14));
  }
  const std::vector<std::size_t> bad{10};
  CHECK_THROWS_AS(token_embed(e, c, bad), VocabError);
  const std::vector<std::size_t> too_long(7, 1);
  CHECK_THROWS_AS(token_embed(e, c, too_long), LengthError);
  CHECK_THROWS_AS(token_embed(e, c, one, 6), LengthError);
}

TEST_CASE("token_embed gradient reaches only looked-up rows") {
  std::mt19937_64 rng(15);
  const EncoderConfig c = small_config();
  TokenEmbedding e = TokenEmbedding::init(c, rng);
  e.table.set_requires_grad(true);
  const std::vector<std::size_t> ids{4, 1, 4};
  sum(token_embed(e, c, ids)).backward();
  for (std::size_t row = 0; row < c.vocab_size; ++row) {
    const double want = row == 4 ? 2.0 : row == 1 ? 1.0 : 0.0;
    for (std::size_t j = 0; j < c.width; ++j) CHECK(e.table.grad()[row * c.width + j] == want);
  }
}
