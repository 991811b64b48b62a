#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "ocl/tensor.hpp"

using namespace ocl;
using ocl::testing::check_gradients;
using ocl::testing::random_away_from_zero;
using ocl::testing::random_tensor;

TEST_CASE("factories and shapes") {
  auto t = Tensor::matrix({{1, 2, 3}, {4, 5, 6}});
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.at(1, 2) == 6);
  CHECK(Tensor::zeros({3}).numel() == 3);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  CHECK_THROWS_AS(t.item(), ContractError);
}

TEST_CASE("matmul values and dimension errors") {
  auto a = Tensor::matrix({{1, 2}, {3, 4}});
  auto b = Tensor::matrix({{5, 6}, {7, 8}});
  auto c = matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
  CHECK_THROWS_AS(matmul(a, Tensor::zeros({3, 2})), DimensionError);
  CHECK_THROWS_AS(add(a, Tensor::zeros({2, 3})), DimensionError);
}

TEST_CASE("relu subgradient at zero is zero") {
  auto x = Tensor::vector({-1.0, 0.0, 2.0}, true);
  backward(sum(relu(x)));
  CHECK(x.grad()[0] == 0.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 1.0);
}

TEST_CASE("l2_normalize leaves a zero row at zero") {
  auto x = Tensor::matrix({{0, 0}, {3, 4}});
  auto y = l2_normalize(x);
  CHECK(y.at(0, 0) == 0.0);
  CHECK(y.at(1, 0) == doctest::Approx(0.6));
  CHECK(y.at(1, 1) == doctest::Approx(0.8));
}

TEST_CASE("masked log_sum_exp matches direct sum and ignores excluded entries") {
  auto x = Tensor::matrix({{1.0, 2.0, 50.0}, {-1.0, 0.5, 3.0}}, true);
  ColumnMask m{1, 1, 0};
  auto y = log_sum_exp(x, m);
  CHECK(y.at(0) == doctest::Approx(std::log(std::exp(1.0) + std::exp(2.0))));
  CHECK(y.at(1) == doctest::Approx(std::log(std::exp(-1.0) + std::exp(0.5))));
  backward(sum(y));
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[5] == 0.0);
  CHECK_THROWS_AS(log_sum_exp(x, ColumnMask{0, 0, 0}), InvalidMaskError);
}

TEST_CASE("backward requires a scalar differentiable root") {
  auto x = Tensor::vector({1.0, 2.0}, true);
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
  CHECK_THROWS_AS(backward(sum(Tensor::vector({1.0}))), ContractError);
}

TEST_CASE("repeated backward accumulates, zero_grad clears") {
  auto x = Tensor::scalar(3.0, true);
  backward(mul(x, x));
  backward(mul(x, x));
  CHECK(x.grad()[0] == doctest::Approx(12.0));
  x.zero_grad();
  CHECK(x.grad()[0] == 0.0);
}

TEST_CASE("tape lists parents before children") {
  auto a = Tensor::matrix({{1, 2}}, true);
  auto b = Tensor::matrix({{3}, {4}}, true);
  auto c = matmul(a, b);
  auto d = sum(relu(c));
  auto tape = Tape::record(d);
  CHECK(tape.position(a) < tape.position(c));
  CHECK(tape.position(b) < tape.position(c));
  CHECK(tape.position(c) < tape.position(d));
  CHECK(tape.position(Tensor::scalar(1.0)) == -1);
}

TEST_CASE("shared subexpression gradient counts both paths") {
  auto x = Tensor::scalar(2.0, true);
  auto y = mul(x, x);
  backward(add(y, y));
  CHECK(x.grad()[0] == doctest::Approx(8.0));
}

TEST_CASE("finite differences for every op") {
  Rng rng(7);
  for (int trial = 0; trial < 5; ++trial) {
    auto a = random_tensor(rng, {3, 4});
    auto b = random_tensor(rng, {4, 2});
    auto c = random_tensor(rng, {3, 4});
    auto bias = random_tensor(rng, {4});
    auto w = random_tensor(rng, {3, 2});
    CHECK(check_gradients([&] { return sum(mul(matmul(a, b), w)); }, {a, b}).ok);
    CHECK(check_gradients([&] { return sum(mul(transpose(a), transpose(c))); }, {a, c}).ok);
    CHECK(check_gradients([&] { return sum(mul(sub(a, c), add(a, c))); }, {a, c}).ok);
    CHECK(check_gradients([&] { return sum(mul(scale(add_bias(a, bias), 0.7), c)); }, {a, bias}).ok);
    auto r = random_away_from_zero(rng, {3, 4});
    CHECK(check_gradients([&] { return sum(mul(relu(r), c)); }, {r}).ok);
    CHECK(check_gradients([&] { return sum(mul(l2_normalize(a), c)); }, {a}).ok);
    RowMask rm(3, 4, true);
    rm.set(0, 1, false);
    rm.set(2, 3, false);
    CHECK(check_gradients([&] { return sum(mul(log_sum_exp(a, rm), Tensor::vector({1.0, -2.0, 0.5}))); }, {a}).ok);
    CHECK(check_gradients([&] { return sum(mul(row_sum(a), Tensor::vector({1.0, 2.0, 3.0}))); }, {a}).ok);
    const std::vector<std::size_t> idx{2, 0, 2};
    CHECK(check_gradients([&] { return sum(mul(select_rows(a, idx), c)); }, {a}).ok);
    const Tensor parts[] = {a, c};
    auto w2 = random_tensor(rng, {6, 4}, 1.0, false);
    CHECK(check_gradients([&] { return sum(mul(concat_rows(parts), w2)); }, {a, c}).ok);
  }
}
