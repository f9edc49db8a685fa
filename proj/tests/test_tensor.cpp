#include <cmath>
#include <random>

#include "doctest.h"
#include "mpl/error.hpp"
#include "mpl/gradcheck.hpp"
#include "mpl/ops.hpp"
#include "support.hpp"

using namespace mpl;
using support::numeric_grad;
using support::random_tensor;

namespace {

void expect_data(const Tensor& t, std::initializer_list<double> want,
                 double tol = 0.0) {
  REQUIRE(t.numel() == want.size());
  std::size_t i = 0;
  for (double w : want) CHECK(std::abs(t.data()[i++] - w) <= tol);
}

// Analytic gradient of `loss(x)` against this file's own central differences.
double grad_error(const std::function<Tensor(const Tensor&)>& loss, Tensor x) {
  x.set_requires_grad(true);
  x.zero_grad();
  loss(x).backward();
  const std::vector<double> analytic(x.grad().begin(), x.grad().end());
  const auto numeric = numeric_grad([&] {
    NoGradGuard g;
    return loss(x).item();
  }, x);
  return support::max_rel_error(analytic, numeric);
}

}  // namespace

TEST_CASE("matmul examples") {
  CHECK(matmul(Tensor::identity(2), Tensor::identity(2)).to_vector() ==
        Tensor::identity(2).to_vector());
  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {1, 1});
  const Tensor c = matmul(a, b);
  CHECK(c.shape() == Shape{2, 1});
  expect_data(c, {3, 7});
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3}), b = Tensor::zeros({4, 5});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x5]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient of sum against central differences") {
  std::mt19937_64 rng(1);
  const Tensor b = random_tensor({4, 2}, rng);
  CHECK(grad_error([&](const Tensor& a) { return sum(matmul(a, b)); },
                   random_tensor({3, 4}, rng)) < 1e-6);
  const Tensor a = random_tensor({3, 4}, rng);
  CHECK(grad_error([&](const Tensor& bb) { return sum(matmul(a, bb)); },
                   random_tensor({4, 2}, rng)) < 1e-6);
}

TEST_CASE("concat_rows examples") {
  std::mt19937_64 rng(2);
  const Tensor a = random_tensor({2, 3}, rng), b = random_tensor({1, 3}, rng);
  CHECK(concat_rows({a}).to_vector() == a.to_vector());
  const Tensor c = concat_rows({a, b});
  CHECK(c.shape() == Shape{3, 3});
  for (std::size_t j = 0; j < 3; ++j) {
    CHECK(c.at(0, j) == a.at(0, j));
    CHECK(c.at(1, j) == a.at(1, j));
    CHECK(c.at(2, j) == b.at(0, j));
  }
  CHECK_THROWS_AS(concat_rows({a, Tensor::zeros({1, 2})}), DimensionError);
  CHECK_THROWS_AS(concat_rows(std::span<const Tensor>{}), DimensionError);
}

TEST_CASE("concat_rows backward routes every row to its owning block") {
  std::mt19937_64 rng(3);
  const std::vector<std::size_t> heights{2, 1, 3};
  const std::size_t d = 4, total = 6;
  for (std::size_t probe_row = 0; probe_row < total; ++probe_row) {
    for (std::size_t probe_col = 0; probe_col < d; ++probe_col) {
      std::vector<Tensor> blocks;
      for (std::size_t h : heights) blocks.push_back(random_tensor({h, d}, rng, 1.0, true));
      std::vector<double> onehot(total * d, 0.0);
      onehot[probe_row * d + probe_col] = 1.0;
      sum(mul(concat_rows(blocks), Tensor({total, d}, onehot))).backward();

      std::size_t offset = 0;
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        for (std::size_t r = 0; r < heights[b]; ++r) {
          for (std::size_t c = 0; c < d; ++c) {
            const bool hit = offset + r == probe_row && c == probe_col;
            CHECK(blocks[b].grad()[r * d + c] == (hit ? 1.0 : 0.0));
          }
        }
        offset += heights[b];
      }
    }
  }
}

TEST_CASE("concat/slice adjointness on random shapes") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<std::size_t> dim(1, 5);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = dim(rng);
    std::vector<Tensor> blocks;
    std::size_t total = 0;
    for (std::size_t k = 0, n = dim(rng); k < n; ++k) {
      blocks.push_back(random_tensor({dim(rng), d}, rng, 1.0, true));
      total += blocks.back().rows();
    }
    const Tensor upstream = random_tensor({total, d}, rng);
    sum(mul(concat_rows(blocks), upstream)).backward();
    std::size_t offset = 0;
    for (const auto& b : blocks) {
      const Tensor want = slice_rows(upstream, offset, offset + b.rows());
      CHECK(std::vector<double>(b.grad().begin(), b.grad().end()) == want.to_vector());
      offset += b.rows();
    }
  }
}

TEST_CASE("slice_rows examples and errors") {
  std::mt19937_64 rng(5);
  const Tensor t = random_tensor({4, 3}, rng);
  CHECK(slice_rows(t, 0, 4).to_vector() == t.to_vector());
  const Tensor empty = slice_rows(t, 0, 0);
  CHECK(empty.shape() == Shape{0, 3});
  CHECK_THROWS_AS(slice_rows(t, 3, 5), BoundsError);
  CHECK_THROWS_AS(slice_rows(t, 3, 2), BoundsError);
}

TEST_CASE("slice then concat of complementary slices is bit-exact") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t r = 1 + rng() % 7, c = 1 + rng() % 5;
    const Tensor t = random_tensor({r, c}, rng);
    const std::size_t cut = rng() % (r + 1);
    CHECK(concat_rows({slice_rows(t, 0, cut), slice_rows(t, cut, r)}).to_vector() ==
          t.to_vector());
  }
}

TEST_CASE("slice_rows backward scatters to the selected rows only") {
  std::mt19937_64 rng(7);
  Tensor t = random_tensor({5, 2}, rng, 1.0, true);
  sum(slice_rows(t, 1, 3)).backward();
  expect_data(Tensor({5, 2}, std::vector<double>(t.grad().begin(), t.grad().end())),
              {0, 0, 1, 1, 1, 1, 0, 0, 0, 0});
}

TEST_CASE("softmax_rows examples") {
  expect_data(softmax_rows(Tensor({1, 2}, {0, 0})), {0.5, 0.5});
  const double e = std::exp(1.0);
  expect_data(softmax_rows(Tensor({1, 2}, {1, 0})), {e / (e + 1), 1 / (e + 1)}, 1e-15);
  const Tensor big = softmax_rows(Tensor({1, 2}, {1000, 0}));
  CHECK(std::isfinite(big.data()[0]));
  CHECK(big.data()[0] == doctest::Approx(1.0));
  CHECK(big.data()[1] < 1e-300);
  CHECK_THROWS_AS(softmax_rows(Tensor({1, 2}, {NAN, 0})), NumericError);
}

TEST_CASE("softmax rows sum to one and ignore a per-row shift") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor t = random_tensor({3, 5}, rng, 4.0);
    const Tensor p = softmax_rows(t);
    std::vector<double> shifted = t.to_vector();
    for (std::size_t r = 0; r < 3; ++r) {
      for (std::size_t c = 0; c < 5; ++c) shifted[r * 5 + c] += 10.0 * (r + 1);
    }
    const Tensor q = softmax_rows(Tensor({3, 5}, shifted));
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 5; ++c) {
        CHECK(p.at(r, c) >= 0.0);
        CHECK(std::abs(p.at(r, c) - q.at(r, c)) < 1e-12);
        s += p.at(r, c);
      }
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("l2_normalize_rows") {
  expect_data(l2_normalize_rows(Tensor({1, 2}, {3, 4})), {0.6, 0.8}, 1e-15);
  CHECK_THROWS_AS(l2_normalize_rows(Tensor({2, 2}, {1, 0, 0, 0})), NumericError);
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor u = l2_normalize_rows(random_tensor({3, 6}, rng));
    const Tensor v = l2_normalize_rows(u);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < 6; ++c) {
        s += u.at(r, c) * u.at(r, c);
        CHECK(std::abs(u.at(r, c) - v.at(r, c)) < 1e-12);
      }
      CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("layernorm_rows") {
  const Tensor c = layernorm_rows(Tensor({1, 4}, {2.5, 2.5, 2.5, 2.5}));
  for (double v : c.data()) CHECK(std::abs(v) < 1e-12);

  std::mt19937_64 rng(10);
  const Tensor y = layernorm_rows(random_tensor({4, 16}, rng, 3.0));
  for (std::size_t r = 0; r < 4; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.at(r, j) / 16.0;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(r, j) - mu) * (y.at(r, j) - mu) / 16.0;
    CHECK(std::abs(mu) < 1e-12);
    CHECK(std::abs(var - 1.0) < 1e-5);
  }
}

TEST_CASE("gelu uses the tanh approximation") {
  const Tensor x({1, 3}, {-1.5, 0.0, 2.0});
  const Tensor y = gelu(x);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(y.data()[i] == doctest::Approx(support::gelu(x.data()[i])).epsilon(1e-15));
  }
}

TEST_CASE("gelu gradient at 20 random points") {
  std::mt19937_64 rng(11);
  CHECK(grad_error([](const Tensor& x) { return sum(gelu(x)); },
                   random_tensor({1, 20}, rng, 2.0)) < 1e-6);
}

TEST_CASE("every differentiable op matches central differences") {
  std::mt19937_64 rng(12);
  const Tensor w = random_tensor({3, 4}, rng);
  const Tensor other = random_tensor({3, 4}, rng);
  const Tensor gain = random_tensor({1, 4}, rng), bias = random_tensor({1, 4}, rng);
  const Tensor bias_row = random_tensor({1, 4}, rng);
  const Tensor probe = random_tensor({3, 3}, rng);
  const std::vector<std::size_t> ids{2, 0, 2};
  const std::vector<std::size_t> cols{1, 3, 0};

  const std::vector<std::pair<const char*, std::function<Tensor(const Tensor&)>>> cases{
      {"matmul", [&](const Tensor& x) { return sum(mul(matmul(x, transpose(w)), probe)); }},
      {"add", [&](const Tensor& x) { return sum(mul(add(x, other), other)); }},
      {"sub", [&](const Tensor& x) { return sum(mul(sub(other, x), other)); }},
      {"mul", [&](const Tensor& x) { return sum(mul(x, x)); }},
      {"scale", [&](const Tensor& x) { return sum(mul(scale(x, -2.5), other)); }},
      {"add_bias", [&](const Tensor& x) { return sum(mul(add_bias(x, bias_row), other)); }},
      {"gelu", [&](const Tensor& x) { return sum(mul(gelu(x), other)); }},
      {"log", [&](const Tensor& x) { return sum(log(add(mul(x, x), Tensor::full({3, 4}, 0.5)))); }},
      {"layernorm", [&](const Tensor& x) { return sum(mul(layernorm_rows(x, gain, bias), other)); }},
      {"l2_normalize", [&](const Tensor& x) { return sum(mul(l2_normalize_rows(x), other)); }},
      {"softmax", [&](const Tensor& x) { return sum(mul(softmax_rows(x), other)); }},
      {"transpose", [&](const Tensor& x) { return sum(mul(transpose(x), transpose(other))); }},
      {"slice_cols", [&](const Tensor& x) { return sum(mul(slice_cols(x, 1, 3), slice_cols(other, 0, 2))); }},
      {"concat_cols", [&](const Tensor& x) { return sum(mul(concat_cols(std::vector<Tensor>{x, other}), concat_cols(std::vector<Tensor>{other, x}))); }},
      {"reshape", [&](const Tensor& x) { return sum(mul(reshape(x, {4, 3}), reshape(other, {4, 3}))); }},
      {"gather_rows", [&](const Tensor& x) { return sum(mul(gather_rows(x, ids), other)); }},
      {"take_per_row", [&](const Tensor& x) { return sum(mul(take_per_row(x, cols), take_per_row(other, cols))); }},
      {"mean", [&](const Tensor& x) { return mean(mul(x, other)); }},
  };
  for (const auto& [name, loss] : cases) {
    CAPTURE(name);
    CHECK(grad_error(loss, random_tensor({3, 4}, rng)) < 1e-6);
  }
}

TEST_CASE("backward examples") {
  std::mt19937_64 rng(13);
  Tensor x = random_tensor({2, 3}, rng, 1.0, true);
  sum(x).backward();
  for (double g : x.grad()) CHECK(g == 1.0);

  x.zero_grad();
  sum(mul(x, x)).backward();
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(x.grad()[i] == 2.0 * x.data()[i]);

  CHECK_THROWS_AS(mul(x, x).backward(), ContractError);
}

TEST_CASE("repeated backward accumulates leaf gradients") {
  Tensor x({1, 2}, {1.0, -2.0}, true);
  const Tensor loss = sum(mul(x, x));
  loss.backward();
  loss.backward();
  expect_data(Tensor({1, 2}, std::vector<double>(x.grad().begin(), x.grad().end())), {4.0, -8.0});
}

TEST_CASE("shared subexpressions are visited once") {
  Tensor x({1, 3}, {0.5, -1.0, 2.0}, true);
  const Tensor y = mul(x, x);
  sum(add(add(y, y), x)).backward();  // d/dx (2x^2 + x) = 4x + 1
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 4.0 * x.data()[i] + 1.0);
}

TEST_CASE("unreachable and frozen tensors get no gradient") {
  Tensor used({1, 2}, {1.0, 2.0}, true);
  Tensor unused({1, 2}, {3.0, 4.0}, true);
  const Tensor frozen({1, 2}, {5.0, 6.0});
  (void)mul(unused, frozen);
  sum(mul(used, frozen)).backward();
  CHECK(used.has_grad());
  CHECK_FALSE(unused.has_grad());
  CHECK_FALSE(frozen.has_grad());
}

TEST_CASE("gradient shapes match data after backward") {
  std::mt19937_64 rng(14);
  Tensor a = random_tensor({3, 2}, rng, 1.0, true);
  Tensor b = random_tensor({2, 4}, rng, 1.0, true);
  sum(gelu(matmul(a, b))).backward();
  CHECK(a.grad().size() == a.numel());
  CHECK(b.grad().size() == b.numel());
}

TEST_CASE("no-grad mode records nothing") {
  Tensor x({1, 2}, {1.0, 2.0}, true);
  NoGradGuard guard;
  const Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("finite_diff_check on known closed forms") {
  std::mt19937_64 rng(15);
  Tensor p = random_tensor({2, 5}, rng, 1.0, true);
  CHECK(finite_diff_check([&] { return sum(mul(p, p)); }, p) < 1e-9);
  CHECK(finite_diff_check([&] { return sum(gelu(p)); }, p) < 1e-6);
  // Values are restored bit-exactly.
  const auto before = p.to_vector();
  finite_diff_check([&] { return sum(gelu(p)); }, p);
  CHECK(p.to_vector() == before);
}

TEST_CASE("finite_diff_check rejects a non-deterministic evaluator") {
  Tensor p({1, 2}, {1.0, 2.0}, true);
  int calls = 0;
  CHECK_THROWS_AS(finite_diff_check(
                      [&] {
                        ++calls;
                        return scale(sum(mul(p, p)), 1.0 + 1e-3 * calls);
                      },
                      p),
                  DeterminismError);
}

TEST_CASE("finite_diff_check catches corrupted backward rules") {
  std::mt19937_64 rng(16);
  Tensor a = random_tensor({3, 4}, rng, 1.0, true);
  const Tensor b = random_tensor({4, 3}, rng);
  const Tensor gain = Tensor::full({1, 3}, 1.3), bias = Tensor::zeros({1, 3});
  const LossFn f = [&] {
    return sum(mul(softmax_rows(gelu(layernorm_rows(matmul(a, b), gain, bias))),
                   Tensor({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9})));
  };
  CHECK(finite_diff_check(f, a) < 1e-6);
  for (auto site : {fault::Site::matmul, fault::Site::gelu, fault::Site::layernorm,
                    fault::Site::softmax}) {
    fault::inject(site);
    const double err = finite_diff_check(f, a);
    fault::inject(fault::Site::none);
    CHECK(err > 1e-4);
  }
}

TEST_CASE("log rejects non-positive input") {
  CHECK_THROWS_AS(mpl::log(Tensor({1, 2}, {1.0, 0.0})), NumericError);
}
