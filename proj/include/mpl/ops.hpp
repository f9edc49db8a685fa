#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "mpl/tensor.hpp"

namespace mpl {

inline constexpr double kLayerNormEps = 1e-5;

// Matrix product of a[m x k] and b[k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& t);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& t, double s);
// t[r x c] + bias[1 x c] on every row.
Tensor add_bias(const Tensor& t, const Tensor& bias);

// tanh approximation: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Tensor gelu(const Tensor& t);
Tensor log(const Tensor& t);

// Row-wise normalisation to zero mean and unit variance (eps = 1e-5),
// followed by the affine gain/bias (each 1 x c).
Tensor layernorm_rows(const Tensor& t, const Tensor& gain, const Tensor& bias);
Tensor layernorm_rows(const Tensor& t);

// Rows scaled to unit Euclidean norm. A zero row is a NumericError.
Tensor l2_normalize_rows(const Tensor& t);

// Max-subtracted softmax over each row.
Tensor softmax_rows(const Tensor& t);

Tensor concat_rows(std::span<const Tensor> blocks);
Tensor concat_rows(std::initializer_list<Tensor> blocks);
Tensor concat_cols(std::span<const Tensor> blocks);
// Rows [from, to); an empty range yields a 0 x c tensor.
Tensor slice_rows(const Tensor& t, std::size_t from, std::size_t to);
Tensor slice_cols(const Tensor& t, std::size_t from, std::size_t to);
Tensor reshape(const Tensor& t, Shape shape);

// Rows of table[v x d] selected by index; backward scatter-adds.
Tensor gather_rows(const Tensor& table, std::span<const std::size_t> ids);
// out[i] = t[i, cols[i]], shape [r x 1].
Tensor take_per_row(const Tensor& t, std::span<const std::size_t> cols);

Tensor sum(const Tensor& t);
Tensor mean(const Tensor& t);

namespace fault {

// Test hook: perturbs the gradient produced by one op's backward rule so
// gradient checks can be shown to catch a wrong derivative.
enum class Site { none, matmul, gelu, layernorm, softmax };
void inject(Site site);
Site current();

}  // namespace fault

}  // namespace mpl
