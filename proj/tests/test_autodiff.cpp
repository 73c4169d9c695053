#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "ucdr/grad_check.hpp"
#include "ucdr/ops.hpp"

using ucdr::GradPause;
using ucdr::Tape;
using ucdr::TapeScope;
using ucdr::Tensor;

namespace {

// Convenience wrapper: checks d f / d points against central differences.
double fd_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> points,
                double step = 1e-5) {
  return ucdr::grad_check<double>(f, points, step).max_rel_error;
}

Tensor<double> randn(ucdr::Shape shape, std::mt19937& rng, double sd = 1.0) {
  return Tensor<double>::gaussian(std::move(shape), rng, sd);
}

}  // namespace

TEST_CASE("grad_check validates its own inputs") {
  auto x = Tensor<double>::scalar(3.0);
  auto f = [&] { return ucdr::mul(x, x); };
  CHECK_THROWS_AS(fd_check(f, {x}, 0.0), ucdr::ContractError);
  CHECK_THROWS_AS(fd_check(f, {x}, 0.5), ucdr::ContractError);
  CHECK_THROWS_AS(fd_check(f, {}), ucdr::ContractError);
}

TEST_CASE("square function error is far below tolerance") {
  auto x = Tensor<double>::scalar(3.0);
  auto err = fd_check([&] { return ucdr::mul(x, x); }, {x});
  CHECK(err < 1e-8);
}

TEST_CASE("softmax gradient at the worked example") {
  // f = softmax(x)[0] at x = [0, 0]; analytic gradient is [0.25, -0.25].
  auto x = Tensor<double>::from_data({2}, {0, 0});
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    y = ucdr::select_element(ucdr::softmax(x), 0);
  }
  tape.backward(y);
  CHECK(x.grad()[0] == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(x.grad()[1] == doctest::Approx(-0.25).epsilon(1e-12));
}

TEST_CASE("every op backward matches finite differences") {
  auto rng = ucdr::make_rng(17, {0});

  SUBCASE("add same shape and broadcast") {
    auto a = randn({3, 4}, rng), b = randn({3, 4}, rng), v = randn({4}, rng);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::add(a, b), ucdr::add(a, b))); }, {a, b}) < 1e-7);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::add(a, v), ucdr::add(a, v))); }, {a, v}) < 1e-7);
  }

  SUBCASE("sub and mul") {
    auto a = randn({5}, rng), b = randn({5}, rng);
    CHECK(fd_check([&] { return ucdr::dot(ucdr::sub(a, b), ucdr::mul(a, b)); }, {a, b}) < 1e-7);
  }

  SUBCASE("scale and mul_scalar") {
    auto a = randn({4}, rng);
    auto s = Tensor<double>::scalar(0.7);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::scale(ucdr::mul(a, a), 3.0)); }, {a}) < 1e-7);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul_scalar(ucdr::mul(a, a), s)); }, {a, s}) < 1e-7);
  }

  SUBCASE("matmul and transpose") {
    auto a = randn({3, 4}, rng), b = randn({4, 2}, rng);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::matmul(a, b), ucdr::matmul(a, b))); }, {a, b}) <
          1e-7);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::transpose(a), ucdr::transpose(a))); }, {a}) < 1e-7);
  }

  SUBCASE("concat and gather and scatter") {
    auto a = randn({2, 3}, rng), b = randn({1, 3}, rng);
    CHECK(fd_check(
              [&] {
                auto c = ucdr::concat({a, b}, 0);
                return ucdr::sum_all(ucdr::mul(c, c));
              },
              {a, b}) < 1e-7);
    auto m = randn({4, 3}, rng);
    std::vector<std::size_t> idx{1, 3, 1};
    CHECK(fd_check(
              [&] {
                auto g = ucdr::gather_rows<double>(m, idx);
                return ucdr::sum_all(ucdr::mul(g, g));
              },
              {m}) < 1e-7);
    auto v = randn({3}, rng);
    std::vector<std::size_t> at{0, 4, 2};
    CHECK(fd_check(
              [&] {
                auto s = ucdr::scatter<double>(v, at, 6);
                return ucdr::dot(s, s);
              },
              {v}) < 1e-7);
  }

  SUBCASE("reductions") {
    auto a = randn({3, 5}, rng);
    CHECK(fd_check([&] { return ucdr::mean_all(ucdr::mul(a, a)); }, {a}) < 1e-7);
    CHECK(fd_check(
              [&] {
                auto mr = ucdr::mean_rows(a);
                return ucdr::dot(mr, mr);
              },
              {a}) < 1e-7);
  }

  SUBCASE("softmax rank 1 and rank 2") {
    auto x = randn({6}, rng);
    auto w = randn({6}, rng);
    CHECK(fd_check([&] { return ucdr::dot(ucdr::softmax(x), w); }, {x}) < 1e-7);
    auto m = randn({3, 4}, rng);
    auto u = randn({3, 4}, rng);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::softmax(m), u)); }, {m}) < 1e-7);
  }

  SUBCASE("log_sum_exp, exp, log") {
    auto x = randn({5}, rng);
    CHECK(fd_check([&] { return ucdr::log_sum_exp(x); }, {x}) < 1e-7);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::vexp(x)); }, {x}) < 1e-7);
    auto p = Tensor<double>::from_data({3}, {0.5, 1.5, 2.5});
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::vlog(p)); }, {p}) < 1e-7);
  }

  SUBCASE("l2_normalize") {
    auto x = randn({5}, rng);
    auto w = randn({5}, rng);
    CHECK(fd_check([&] { return ucdr::dot(ucdr::l2_normalize(x), w); }, {x}) < 1e-7);
    auto m = randn({3, 4}, rng);
    auto u = randn({3, 4}, rng);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::l2_normalize(m), u)); }, {m}) < 1e-7);
  }

  SUBCASE("relu away from the kink") {
    auto x = Tensor<double>::from_data({4}, {-1.3, 0.8, 2.1, -0.4});
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::relu(x), ucdr::relu(x))); }, {x}) < 1e-7);
  }

  SUBCASE("distances and similarities") {
    auto a = randn({6}, rng), b = randn({6}, rng);
    CHECK(fd_check([&] { return ucdr::squared_euclidean(a, b); }, {a, b}) < 1e-7);
    CHECK(fd_check([&] { return ucdr::cosine_similarity(a, b); }, {a, b}) < 1e-7);
  }

  SUBCASE("layer_norm") {
    auto x = randn({3, 6}, rng);
    auto gain = randn({6}, rng, 0.5);
    auto bias = randn({6}, rng, 0.5);
    auto w = randn({3, 6}, rng);
    CHECK(fd_check([&] { return ucdr::sum_all(ucdr::mul(ucdr::layer_norm(x, gain, bias), w)); },
                   {x, gain, bias}) < 1e-6);
  }

  SUBCASE("reshape and select") {
    auto x = randn({2, 3}, rng);
    CHECK(fd_check(
              [&] {
                auto r = ucdr::reshape(x, {6});
                return ucdr::select_element(r, 4);
              },
              {x}) < 1e-7);
  }
}

TEST_CASE("gradients flow through frozen weights to tracked inputs") {
  // Frozen weights (requires_grad false) still pass gradients through to a
  // tracked input, but collect none themselves.
  auto rng = ucdr::make_rng(5, {2});
  auto w = randn({4, 3}, rng);
  auto x = randn({1, 4}, rng);
  x.set_requires_grad(true);
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    auto h = ucdr::matmul(x, w);
    y = ucdr::sum_all(ucdr::mul(h, h));
  }
  tape.backward(y);
  CHECK(x.has_grad());
  CHECK_FALSE(w.has_grad());
  CHECK(fd_check(
            [&] {
              auto h = ucdr::matmul(x, w);
              return ucdr::sum_all(ucdr::mul(h, h));
            },
            {x}) < 1e-7);
}

TEST_CASE("composite expression reusing one input") {
  auto rng = ucdr::make_rng(23, {4});
  auto x = randn({4}, rng);
  auto f = [&] {
    auto s = ucdr::softmax(x);
    auto n = ucdr::l2_normalize(x);
    return ucdr::add(ucdr::dot(s, n), ucdr::log_sum_exp(x));
  };
  CHECK(fd_check(f, {x}) < 1e-7);
}
