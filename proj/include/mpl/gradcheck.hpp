#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>

#include "mpl/tensor.hpp"

namespace mpl {

// Rebuilds the scalar loss from the current parameter values.
using LossFn = std::function<Tensor()>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Location and values of the worst coordinate.
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

// Compares reverse-mode gradients against central differences
//   (f(p + eps e_i) - f(p - eps e_i)) / (2 eps)
// over every coordinate of every tensor in `params`. The per-coordinate error
// is |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
//
// f is evaluated twice at the unperturbed point first; differing values
// raise DeterminismError. Parameter values are restored bit-exactly.
GradCheckResult finite_diff_check(const LossFn& f, std::span<Tensor> params,
                                  double eps = 1e-5);

double finite_diff_check(const LossFn& f, Tensor& param, double eps = 1e-5);

}  // namespace mpl
