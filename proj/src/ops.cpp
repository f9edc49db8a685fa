#include "mpl/ops.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numbers>
#include <string>

#include "mpl/error.hpp"

namespace mpl {

using detail::make_result;
using detail::Node;

namespace fault {
namespace {
std::atomic<int> g_site{0};
}
void inject(Site site) { g_site.store(static_cast<int>(site)); }
Site current() { return static_cast<Site>(g_site.load()); }
}  // namespace fault

namespace {

double fault_factor(fault::Site site) {
  return fault::current() == site ? 1.01 : 1.0;
}

void require_2d(const Tensor& t, const char* op) {
  if (t.dim() != 2) {
    throw DimensionError(std::string(op) + ": expected a 2-D tensor, got " +
                         shape_str(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

Node& parent(Node& self, std::size_t i) { return *self.parents[i]; }

// C[m x n] += A[m x k] * B[k x n]
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, double alpha = 1.0) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = alpha * a[i * k + p];
      if (av == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m x n] += A[m x k] * B[n x k]^T
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, double alpha = 1.0) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b + j * k;
      double acc = 0.0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      c[i * n + j] += alpha * acc;
    }
  }
}

// C[m x n] += A[k x m]^T * B[k x n]
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const double* a,
             const double* b, double* c, double alpha = 1.0) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* arow = a + p * m;
    const double* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = alpha * arow[i];
      if (av == 0.0) continue;
      double* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2 / pi)
constexpr double kGeluA = 0.044715;

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner extents differ, " +
                         shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  gemm_nn(m, k, n, a.data().data(), b.data().data(), out.data());
  return make_result({m, n}, std::move(out), {a, b}, "matmul",
                     [m, k, n](Node& self) {
                       Node& pa = parent(self, 0);
                       Node& pb = parent(self, 1);
                       const double f = fault_factor(fault::Site::matmul);
                       if (pa.requires_grad) {
                         gemm_nt(m, n, k, self.grad.data(), pb.data.data(),
                                 pa.ensure_grad().data(), f);
                       }
                       if (pb.requires_grad) {
                         gemm_tn(k, m, n, pa.data.data(), self.grad.data(),
                                 pb.ensure_grad().data());
                       }
                     });
}

Tensor transpose(const Tensor& t) {
  require_2d(t, "transpose");
  const std::size_t r = t.rows(), c = t.cols();
  std::vector<double> out(r * c);
  const auto in = t.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
  return make_result({c, r}, std::move(out), {t}, "transpose",
                     [r, c](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += self.grad[j * r + i];
                     });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "add", [](Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      Node& in = parent(self, p);
      if (!in.requires_grad) continue;
      auto& g = in.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "sub", [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  std::vector<double> out(a.numel());
  const auto x = a.data(), y = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
  return make_result(a.shape(), std::move(out), {a, b}, "mul", [](Node& self) {
    Node& pa = parent(self, 0);
    Node& pb = parent(self, 1);
    if (pa.requires_grad) {
      auto& g = pa.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * pb.data[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] += self.grad[i] * pa.data[i];
    }
  });
}

Tensor scale(const Tensor& t, double s) {
  std::vector<double> out(t.numel());
  const auto x = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s;
  return make_result(t.shape(), std::move(out), {t}, "scale",
                     [s](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i] * s;
                     });
}

Tensor add_bias(const Tensor& t, const Tensor& bias) {
  require_2d(t, "add_bias");
  const std::size_t r = t.rows(), c = t.cols();
  if (bias.numel() != c) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) +
                         " does not match columns of " + shape_str(t.shape()));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  const auto b = bias.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] += b[j];
  return make_result({r, c}, std::move(out), {t, bias}, "add_bias",
                     [r, c](Node& self) {
                       Node& pt = parent(self, 0);
                       Node& pb = parent(self, 1);
                       if (pt.requires_grad) {
                         auto& g = pt.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[i];
                       }
                       if (pb.requires_grad) {
                         auto& g = pb.ensure_grad();
                         for (std::size_t i = 0; i < r; ++i)
                           for (std::size_t j = 0; j < c; ++j)
                             g[j] += self.grad[i * c + j];
                       }
                     });
}

Tensor gelu(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto x = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(kGeluC * (v + kGeluA * v * v * v)));
  }
  return make_result(t.shape(), std::move(out), {t}, "gelu", [](Node& self) {
    Node& in = parent(self, 0);
    auto& g = in.ensure_grad();
    const double f = fault_factor(fault::Site::gelu);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double v = in.data[i];
      const double th = std::tanh(kGeluC * (v + kGeluA * v * v * v));
      const double d = 0.5 * (1.0 + th) +
                       0.5 * v * (1.0 - th * th) * kGeluC *
                           (1.0 + 3.0 * kGeluA * v * v);
      g[i] += f * self.grad[i] * d;
    }
  });
}

Tensor log(const Tensor& t) {
  std::vector<double> out(t.numel());
  const auto x = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!(x[i] > 0.0)) {
      throw NumericError("log of non-positive value " + std::to_string(x[i]));
    }
    out[i] = std::log(x[i]);
  }
  return make_result(t.shape(), std::move(out), {t}, "log", [](Node& self) {
    Node& in = parent(self, 0);
    auto& g = in.ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / in.data[i];
  });
}

Tensor layernorm_rows(const Tensor& t, const Tensor& gain,
                      const Tensor& bias) {
  require_2d(t, "layernorm_rows");
  const std::size_t r = t.rows(), c = t.cols();
  if (c == 0) throw DimensionError("layernorm_rows: rows have no columns");
  if (gain.numel() != c || bias.numel() != c) {
    throw DimensionError("layernorm_rows: gain/bias " +
                         shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs input " +
                         shape_str(t.shape()));
  }
  const auto x = t.data();
  const auto gm = gain.data();
  const auto bt = bias.data();
  std::vector<double> xhat(r * c), rstd(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double mu = 0.0;
    for (std::size_t j = 0; j < c; ++j) mu += row[j];
    mu /= static_cast<double>(c);
    double var = 0.0;
    for (std::size_t j = 0; j < c; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(c);
    rstd[i] = 1.0 / std::sqrt(var + kLayerNormEps);
    for (std::size_t j = 0; j < c; ++j) {
      xhat[i * c + j] = (row[j] - mu) * rstd[i];
      out[i * c + j] = xhat[i * c + j] * gm[j] + bt[j];
    }
  }
  return make_result(
      {r, c}, std::move(out), {t, gain, bias}, "layernorm",
      [r, c, xhat = std::move(xhat), rstd = std::move(rstd)](Node& self) {
        Node& px = parent(self, 0);
        Node& pg = parent(self, 1);
        Node& pb = parent(self, 2);
        const double* gy = self.grad.data();
        if (pg.requires_grad) {
          auto& g = pg.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              g[j] += gy[i * c + j] * xhat[i * c + j];
        }
        if (pb.requires_grad) {
          auto& g = pb.ensure_grad();
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) g[j] += gy[i * c + j];
        }
        if (px.requires_grad) {
          auto& g = px.ensure_grad();
          const double f = fault_factor(fault::Site::layernorm);
          const double inv_c = 1.0 / static_cast<double>(c);
          for (std::size_t i = 0; i < r; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = gy[i * c + j] * pg.data[j];
              m1 += dxh;
              m2 += dxh * xhat[i * c + j];
            }
            m1 *= inv_c;
            m2 *= inv_c;
            for (std::size_t j = 0; j < c; ++j) {
              const double dxh = gy[i * c + j] * pg.data[j];
              g[i * c + j] +=
                  f * rstd[i] * (dxh - m1 - xhat[i * c + j] * m2);
            }
          }
        }
      });
}

Tensor layernorm_rows(const Tensor& t) {
  require_2d(t, "layernorm_rows");
  const std::size_t c = t.cols();
  return layernorm_rows(t, Tensor::full({1, c}, 1.0), Tensor::zeros({1, c}));
}

Tensor l2_normalize_rows(const Tensor& t) {
  require_2d(t, "l2_normalize_rows");
  const std::size_t r = t.rows(), c = t.cols();
  if (c == 0) throw DimensionError("l2_normalize_rows: rows have no columns");
  const auto x = t.data();
  std::vector<double> norms(r), out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < c; ++j) s += x[i * c + j] * x[i * c + j];
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw NumericError("l2_normalize_rows: row " + std::to_string(i) +
                         " has zero or non-finite norm");
    }
    norms[i] = std::sqrt(s);
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] = x[i * c + j] / norms[i];
  }
  return make_result({r, c}, std::move(out), {t}, "l2_normalize",
                     [r, c, norms = std::move(norms)](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.data.data() + i * c;
                         const double* gy = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += (gy[j] - y[j] * dot) / norms[i];
                       }
                     });
}

Tensor softmax_rows(const Tensor& t) {
  require_2d(t, "softmax_rows");
  const std::size_t r = t.rows(), c = t.cols();
  const auto x = t.data();
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i) {
    const double* row = x.data() + i * c;
    double mx = -INFINITY;
    for (std::size_t j = 0; j < c; ++j) {
      if (std::isnan(row[j])) {
        throw NumericError("softmax_rows: NaN in row " + std::to_string(i));
      }
      mx = std::max(mx, row[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      out[i * c + j] = std::exp(row[j] - mx);
      z += out[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) out[i * c + j] /= z;
  }
  return make_result({r, c}, std::move(out), {t}, "softmax",
                     [r, c](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       const double f = fault_factor(fault::Site::softmax);
                       for (std::size_t i = 0; i < r; ++i) {
                         const double* y = self.data.data() + i * c;
                         const double* gy = self.grad.data() + i * c;
                         double dot = 0.0;
                         for (std::size_t j = 0; j < c; ++j) dot += y[j] * gy[j];
                         for (std::size_t j = 0; j < c; ++j)
                           g[i * c + j] += f * y[j] * (gy[j] - dot);
                       }
                     });
}

Tensor concat_rows(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw DimensionError("concat_rows: empty block list");
  const std::size_t c = blocks[0].cols();
  std::size_t total = 0;
  for (const auto& b : blocks) {
    require_2d(b, "concat_rows");
    if (b.cols() != c) {
      throw DimensionError("concat_rows: column mismatch " +
                           shape_str(blocks[0].shape()) + " vs " +
                           shape_str(b.shape()));
    }
    total += b.rows();
  }
  std::vector<double> out;
  out.reserve(total * c);
  std::vector<std::size_t> offsets;
  offsets.reserve(blocks.size());
  for (const auto& b : blocks) {
    offsets.push_back(out.size());
    out.insert(out.end(), b.data().begin(), b.data().end());
  }
  std::vector<Tensor> inputs(blocks.begin(), blocks.end());
  return make_result({total, c}, std::move(out), std::move(inputs),
                     "concat_rows", [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t p = 0; p < self.parents.size(); ++p) {
                         Node& in = parent(self, p);
                         if (!in.requires_grad) continue;
                         auto& g = in.ensure_grad();
                         for (std::size_t i = 0; i < g.size(); ++i)
                           g[i] += self.grad[offsets[p] + i];
                       }
                     });
}

Tensor concat_rows(std::initializer_list<Tensor> blocks) {
  return concat_rows(std::span<const Tensor>(blocks.begin(), blocks.size()));
}

Tensor concat_cols(std::span<const Tensor> blocks) {
  if (blocks.empty()) throw DimensionError("concat_cols: empty block list");
  const std::size_t r = blocks[0].rows();
  std::size_t total = 0;
  std::vector<std::size_t> offsets;
  for (const auto& b : blocks) {
    require_2d(b, "concat_cols");
    if (b.rows() != r) {
      throw DimensionError("concat_cols: row mismatch " +
                           shape_str(blocks[0].shape()) + " vs " +
                           shape_str(b.shape()));
    }
    offsets.push_back(total);
    total += b.cols();
  }
  std::vector<double> out(r * total);
  for (std::size_t p = 0; p < blocks.size(); ++p) {
    const auto d = blocks[p].data();
    const std::size_t c = blocks[p].cols();
    for (std::size_t i = 0; i < r; ++i)
      std::copy_n(d.data() + i * c, c, out.data() + i * total + offsets[p]);
  }
  std::vector<Tensor> inputs(blocks.begin(), blocks.end());
  return make_result(
      {r, total}, std::move(out), std::move(inputs), "concat_cols",
      [r, total, offsets = std::move(offsets)](Node& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          Node& in = parent(self, p);
          if (!in.requires_grad) continue;
          auto& g = in.ensure_grad();
          const std::size_t c = in.shape[1];
          for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j)
              g[i * c + j] += self.grad[i * total + offsets[p] + j];
        }
      });
}

Tensor slice_rows(const Tensor& t, std::size_t from, std::size_t to) {
  require_2d(t, "slice_rows");
  const std::size_t r = t.rows(), c = t.cols();
  if (from > to || to > r) {
    throw BoundsError("slice_rows: [" + std::to_string(from) + ", " +
                      std::to_string(to) + ") outside " + shape_str(t.shape()));
  }
  std::vector<double> out(t.data().begin() + from * c,
                          t.data().begin() + to * c);
  return make_result({to - from, c}, std::move(out), {t}, "slice_rows",
                     [from, c](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < self.grad.size(); ++i)
                         g[from * c + i] += self.grad[i];
                     });
}

Tensor slice_cols(const Tensor& t, std::size_t from, std::size_t to) {
  require_2d(t, "slice_cols");
  const std::size_t r = t.rows(), c = t.cols();
  if (from > to || to > c) {
    throw BoundsError("slice_cols: [" + std::to_string(from) + ", " +
                      std::to_string(to) + ") outside " + shape_str(t.shape()));
  }
  const std::size_t w = to - from;
  std::vector<double> out(r * w);
  const auto d = t.data();
  for (std::size_t i = 0; i < r; ++i)
    std::copy_n(d.data() + i * c + from, w, out.data() + i * w);
  return make_result({r, w}, std::move(out), {t}, "slice_cols",
                     [r, c, w, from](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < r; ++i)
                         for (std::size_t j = 0; j < w; ++j)
                           g[i * c + from + j] += self.grad[i * w + j];
                     });
}

Tensor reshape(const Tensor& t, Shape shape) {
  if (shape_numel(shape) != t.numel()) {
    throw DimensionError("reshape: " + shape_str(t.shape()) + " to " +
                         shape_str(shape));
  }
  std::vector<double> out(t.data().begin(), t.data().end());
  return make_result(std::move(shape), std::move(out), {t}, "reshape",
                     [](Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < g.size(); ++i)
                         g[i] += self.grad[i];
                     });
}

Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids) {
  require_2d(table, "gather_rows");
  const std::size_t v = table.rows(), d = table.cols();
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v) {
      throw BoundsError("gather_rows: index " + std::to_string(ids[i]) +
                        " outside table of " + std::to_string(v) + " rows");
    }
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  return make_result({ids.size(), d}, std::move(out), {table}, "gather_rows",
                     [d, ids = std::vector<std::size_t>(ids.begin(), ids.end())](
                         Node& self) {
                       auto& g = parent(self, 0).ensure_grad();
                       for (std::size_t i = 0; i < ids.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j)
                           g[ids[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor take_per_row(const Tensor& t, std::span<const std::size_t> cols) {
  require_2d(t, "take_per_row");
  const std::size_t r = t.rows(), c = t.cols();
  if (cols.size() != r) {
    throw DimensionError("take_per_row: " + std::to_string(cols.size()) +
                         " indices for " + std::to_string(r) + " rows");
  }
  std::vector<double> out(r);
  for (std::size_t i = 0; i < r; ++i) {
    if (cols[i] >= c) {
      throw BoundsError("take_per_row: column " + std::to_string(cols[i]) +
                        " outside " + shape_str(t.shape()));
    }
    out[i] = t.data()[i * c + cols[i]];
  }
  return make_result(
      {r, 1}, std::move(out), {t}, "take_per_row",
      [c, cols = std::vector<std::size_t>(cols.begin(), cols.end())](
          Node& self) {
        auto& g = parent(self, 0).ensure_grad();
        for (std::size_t i = 0; i < cols.size(); ++i)
          g[i * c + cols[i]] += self.grad[i];
      });
}

Tensor sum(const Tensor& t) {
  double s = 0.0;
  for (double v : t.data()) s += v;
  return make_result({1, 1}, {s}, {t}, "sum", [](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (double& v : g) v += self.grad[0];
  });
}

Tensor mean(const Tensor& t) {
  if (t.numel() == 0) throw DimensionError("mean of an empty tensor");
  const double n = static_cast<double>(t.numel());
  double s = 0.0;
  for (double v : t.data()) s += v;
  return make_result({1, 1}, {s / n}, {t}, "mean", [n](Node& self) {
    auto& g = parent(self, 0).ensure_grad();
    for (double& v : g) v += self.grad[0] / n;
  });
}

}  // namespace mpl
