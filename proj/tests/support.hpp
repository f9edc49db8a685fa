#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <vector>

#include "mpl/clip.hpp"
#include "mpl/ops.hpp"
#include "mpl/prompts.hpp"
#include "mpl/schedule.hpp"
#include "mpl/tensor.hpp"
#include "mpl/transformer.hpp"

namespace support {

using mpl::Tensor;
using Mat = std::vector<std::vector<double>>;

inline Tensor random_tensor(mpl::Shape shape, std::mt19937_64& rng,
                            double scale = 1.0, bool grad = false) {
  std::normal_distribution<double> d(0.0, scale);
  std::vector<double> v(mpl::shape_numel(shape));
  for (double& x : v) x = d(rng);
  return Tensor(std::move(shape), std::move(v), grad);
}

inline Tensor random_image(std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(h * w * 3);
  for (double& x : v) x = u(rng);
  return Tensor({h, w, 3}, std::move(v));
}

// Central differences computed here, independently of the library checker.
inline std::vector<double> numeric_grad(const std::function<double()>& f,
                                        Tensor& p, double eps = 1e-5) {
  std::vector<double> g(p.numel());
  auto v = p.mutable_data();
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double orig = v[i];
    v[i] = orig + eps;
    const double up = f();
    v[i] = orig - eps;
    const double down = f();
    v[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

inline double rel_error(double a, double n) {
  return std::abs(a - n) / std::max(1e-8, std::abs(a) + std::abs(n));
}

inline double max_rel_error(std::span<const double> analytic,
                            std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    worst = std::max(worst, rel_error(analytic[i], numeric[i]));
  }
  return worst;
}

// ---- plain-double reference arithmetic ------------------------------------

inline Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t r = 0; r < t.rows(); ++r) {
    for (std::size_t c = 0; c < t.cols(); ++c) m[r][c] = t.at(r, c);
  }
  return m;
}

inline Mat mm(const Mat& a, const Mat& b) {
  const std::size_t n = b.empty() ? 0 : b[0].size();
  Mat out(a.size(), std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      for (std::size_t j = 0; j < n; ++j) out[i][j] += a[i][k] * b[k][j];
    }
  }
  return out;
}

inline Mat plus_bias(Mat a, const Mat& bias) {
  for (auto& row : a) {
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += bias[0][j];
  }
  return a;
}

inline Mat plus(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  }
  return a;
}

inline Mat layer_norm(const Mat& x, const Mat& gain, const Mat& bias) {
  Mat out = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mu = 0.0;
    for (double v : x[i]) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : x[i]) var += (v - mu) * (v - mu);
    var /= n;
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    for (std::size_t j = 0; j < x[i].size(); ++j) {
      out[i][j] = (x[i][j] - mu) * inv * gain[0][j] + bias[0][j];
    }
  }
  return out;
}

inline double gelu(double x) {
  const double c = std::sqrt(2.0 / std::numbers::pi);
  return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

inline Mat attention(const mpl::LayerParams& p, const Mat& x) {
  const Mat q = plus_bias(mm(x, to_mat(p.w_q)), to_mat(p.b_q));
  const Mat k = plus_bias(mm(x, to_mat(p.w_k)), to_mat(p.b_k));
  const Mat v = plus_bias(mm(x, to_mat(p.w_v)), to_mat(p.b_v));
  const std::size_t n = x.size(), d = x[0].size(), dh = d / p.num_heads;
  Mat merged(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < p.num_heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> s(n);
      double top = -INFINITY;
      for (std::size_t j = 0; j < n; ++j) {
        double dot = 0.0;
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) dot += q[i][c] * k[j][c];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        top = std::max(top, s[j]);
      }
      double z = 0.0;
      for (double& e : s) z += (e = std::exp(e - top));
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t c = h * dh; c < (h + 1) * dh; ++c) {
          merged[i][c] += s[j] / z * v[j][c];
        }
      }
    }
  }
  return plus_bias(mm(merged, to_mat(p.w_o)), to_mat(p.b_o));
}

inline Mat layer(const mpl::LayerParams& p, const Mat& x) {
  const Mat h = plus(x, attention(p, layer_norm(x, to_mat(p.ln1_gain), to_mat(p.ln1_bias))));
  Mat hidden = plus_bias(mm(layer_norm(h, to_mat(p.ln2_gain), to_mat(p.ln2_bias)),
                            to_mat(p.mlp_w1)),
                         to_mat(p.mlp_b1));
  for (auto& row : hidden) {
    for (double& v : row) v = gelu(v);
  }
  return plus(h, plus_bias(mm(hidden, to_mat(p.mlp_w2)), to_mat(p.mlp_b2)));
}

inline std::vector<double> normalized(std::vector<double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  s = std::sqrt(s);
  for (double& x : v) x /= s;
  return v;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Vision prompts for one layer straight from the affine map: row 0 of the
// text block times the weight, plus bias, cut into rows of d_v.
inline Mat coupled_prompts(const Tensor& weight, const Tensor& bias,
                           const Tensor& text_block, std::size_t dv) {
  const Mat flat = plus_bias(mm({to_mat(text_block)[0]}, to_mat(weight)), to_mat(bias));
  Mat out;
  for (std::size_t r = 0; r * dv < flat[0].size(); ++r) {
    out.emplace_back(flat[0].begin() + static_cast<long>(r * dv),
                     flat[0].begin() + static_cast<long>((r + 1) * dv));
  }
  return out;
}

inline Mat embed_image(const mpl::VisionBackbone& b, const Tensor& image) {
  const auto& c = b.config;
  const std::size_t ps = c.patch_size;
  Mat patches;
  for (std::size_t gr = 0; gr < c.grid_rows(); ++gr) {
    for (std::size_t gc = 0; gc < c.grid_cols(); ++gc) {
      std::vector<double> p;
      for (std::size_t y = 0; y < ps; ++y) {
        for (std::size_t x = 0; x < ps; ++x) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            p.push_back(image.data()[((gr * ps + y) * c.image_width + gc * ps + x) * 3 + ch]);
          }
        }
      }
      patches.push_back(p);
    }
  }
  Mat tokens = to_mat(b.embed.class_token);
  for (auto& row : mm(patches, to_mat(b.embed.projection))) tokens.push_back(row);
  return plus(tokens, to_mat(b.embed.positional));
}

inline Mat rows_from(const Mat& m, std::size_t from) {
  return Mat(m.begin() + static_cast<long>(from), m.end());
}

inline Mat stack(const Mat& a, const Mat& b) {
  Mat out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

// Full plain-double image embedding u for any schedule, simulating the
// prompt lists row by row.
inline std::vector<double> reference_image_embedding(const mpl::PromptedClip& m,
                                                     const Tensor& image) {
  const auto& s = m.schedule();
  const std::size_t dv = m.config().vision.width;
  Mat tokens = embed_image(m.vision(), image);
  Mat carried;
  for (std::size_t i = 0; i < s.num_layers(); ++i) {
    const auto& e = s.entry(i);
    Mat fresh;
    if (i < s.depth() && e.add > 0) {
      fresh = coupled_prompts(m.coupling().weights[i], m.coupling().biases[i],
                              m.text_prompts().blocks[i], dv);
    }
    const std::size_t prompts = fresh.size() + carried.size();
    Mat out = layer(m.vision().stack.layers[i], stack(stack(fresh, carried), tokens));
    out = rows_from(out, e.remove);
    Mat survivors(out.begin(), out.begin() + static_cast<long>(prompts - e.remove));
    tokens = rows_from(out, prompts - e.remove);
    carried = e.carry ? survivors : Mat{};
  }
  const auto& proj = m.projection();
  const Mat normed = layer_norm({tokens[0]}, to_mat(proj.image_norm_gain),
                                to_mat(proj.image_norm_bias));
  return normalized(mm(normed, to_mat(proj.image))[0]);
}

inline std::vector<double> reference_text_embedding(
    const mpl::PromptedClip& m, const std::vector<std::size_t>& name) {
  const auto& tb = m.text();
  const auto& blocks = m.text_prompts().blocks;
  const std::size_t rows = blocks.empty() ? 0 : blocks[0].rows();
  const Mat table = to_mat(tb.embed.table), pos = to_mat(tb.embed.positional);
  Mat x;
  if (rows > 0) x = to_mat(blocks[0]);
  std::vector<std::size_t> words = tb.template_tokens;
  words.insert(words.end(), name.begin(), name.end());
  for (std::size_t id : words) x.push_back(table[id]);
  for (std::size_t r = 0; r < x.size(); ++r) {
    for (std::size_t c = 0; c < x[r].size(); ++c) x[r][c] += pos[r][c];
  }
  for (std::size_t i = 0; i < tb.stack.layers.size(); ++i) {
    if (i > 0 && i < blocks.size()) {
      const Mat b = to_mat(blocks[i]);
      for (std::size_t r = 0; r < rows; ++r) x[r] = b[r];
    }
    x = layer(tb.stack.layers[i], x);
  }
  const auto& proj = m.projection();
  const Mat normed = layer_norm({x.back()}, to_mat(proj.text_norm_gain),
                                to_mat(proj.text_norm_bias));
  return normalized(mm(normed, to_mat(proj.text))[0]);
}

// ---- schedules -------------------------------------------------------------

// Random schedule satisfying every build rule.
inline std::vector<mpl::ScheduleEntry> random_entries(std::mt19937_64& rng,
                                                      std::size_t layers,
                                                      std::size_t depth,
                                                      std::size_t max_add = 3) {
  std::uniform_int_distribution<std::size_t> add_d(0, max_add);
  std::bernoulli_distribution coin(0.5);
  std::vector<mpl::ScheduleEntry> e(layers);
  for (std::size_t i = 0; i < depth; ++i) {
    e[i].add = add_d(rng);
    e[i].remove = std::uniform_int_distribution<std::size_t>(0, e[i].add)(rng);
    e[i].carry = coin(rng);
  }
  return e;
}

inline mpl::PromptSchedule random_schedule(std::mt19937_64& rng,
                                           std::size_t layers) {
  const std::size_t depth =
      std::uniform_int_distribution<std::size_t>(0, layers)(rng);
  return mpl::PromptSchedule::build(random_entries(rng, layers, depth), depth);
}

struct Simulated {
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> carried_in;
};

// Tracks individual prompt identities through every layer.
inline Simulated simulate(const mpl::PromptSchedule& s, std::size_t patches) {
  Simulated out;
  std::vector<int> carried;
  int next_id = 0;
  for (std::size_t i = 0; i < s.num_layers(); ++i) {
    const auto& e = s.entry(i);
    std::vector<int> row;
    for (std::size_t k = 0; k < e.add; ++k) row.push_back(next_id++);
    out.carried_in.push_back(carried.size());
    row.insert(row.end(), carried.begin(), carried.end());
    out.lengths.push_back(row.size() + 1 + patches);
    row.erase(row.begin(), row.begin() + static_cast<long>(e.remove));
    carried = e.carry ? row : std::vector<int>{};
  }
  return out;
}

// ---- models ----------------------------------------------------------------

inline mpl::ModelConfig tiny_config(std::size_t layers = 2) {
  mpl::ModelConfig c;
  c.vision.num_layers = layers;
  c.vision.num_heads = 2;
  c.vision.width = 8;
  c.vision.mlp_ratio = 2;
  c.vision.image_height = 8;
  c.vision.image_width = 8;
  c.vision.patch_size = 4;
  c.text.num_layers = layers;
  c.text.num_heads = 2;
  c.text.width = 6;
  c.text.mlp_ratio = 2;
  c.text.vocab_size = 16;
  c.text.max_seq_len = 10;
  c.embed_dim = 5;
  c.template_tokens = {1, 2};
  return c;
}

}  // namespace support
