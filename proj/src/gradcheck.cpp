#include "mpl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mpl/error.hpp"

namespace mpl {

GradCheckResult finite_diff_check(const LossFn& f, std::span<Tensor> params,
                                  double eps) {
  if (!(eps > 0.0)) throw ContractError("finite_diff_check: eps must be > 0");
  if (params.empty()) throw ContractError("finite_diff_check: no parameters");

  for (auto& p : params) {
    if (!p.is_leaf() || !p.requires_grad()) {
      throw ContractError(
          "finite_diff_check: parameters must be grad-enabled leaves");
    }
    p.zero_grad();
  }
  const Tensor loss = f();
  loss.backward();

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  NoGradGuard no_grad;
  const auto eval = [&f] { return f().item(); };
  const double base = eval();
  if (base != loss.item() || eval() != base) {
    throw DeterminismError(
        "finite_diff_check: loss differs between identical evaluations");
  }

  GradCheckResult result;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      const double up = eval();
      values[i] = saved - eps;
      const double down = eval();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k][i];
      const double err =
          std::abs(a - numeric) /
          std::max(1e-8, std::abs(a) + std::abs(numeric));
      // NaN compares false, so it is reported as an infinite error.
      if (!(err <= result.max_rel_error) || result.coordinates == 0) {
        result.max_rel_error = std::isnan(err) ? INFINITY : err;
        result.worst_param = k;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
      ++result.coordinates;
    }
  }
  return result;
}

double finite_diff_check(const LossFn& f, Tensor& param, double eps) {
  return finite_diff_check(f, std::span<Tensor>(&param, 1), eps).max_rel_error;
}

}  // namespace mpl
