#include <cmath>
#include <limits>
#include <vector>

#include "doctest.h"
#include "ucdr/adam.hpp"
#include "ucdr/ops.hpp"

using namespace ucdr;

TEST_CASE("adam validates its config") {
  std::vector<Tensor<double>> params{Tensor<double>::zeros({2})};
  AdamConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS_AS(Adam<double>(params, bad), ConfigError);
  bad = AdamConfig{};
  bad.epsilon = 0.0;
  CHECK_THROWS_AS(Adam<double>(params, bad), ConfigError);
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  auto p = Tensor<double>::from_data({3}, {1.0, -2.0, 0.5});
  Adam<double> opt({p});
  std::vector<double> zero(3, 0.0);
  p.accumulate_grad(zero);
  opt.step(0.1);
  CHECK(p.data()[0] == 1.0);
  CHECK(p.data()[1] == -2.0);
  CHECK(p.data()[2] == 0.5);

  // A missing gradient buffer counts as zero too.
  opt.step(0.1);
  CHECK(p.data()[0] == 1.0);
  CHECK(opt.steps() == 2);
}

TEST_CASE("constant gradient steps approach the learning rate in magnitude") {
  auto p = Tensor<double>::from_data({1}, {5.0});
  Adam<double> opt({p});
  const double lr = 0.01;
  double prev = p.data()[0];
  double last_step = 0.0;
  for (int i = 0; i < 500; ++i) {
    std::vector<double> g{3.7};
    p.accumulate_grad(g);
    opt.step(lr);
    last_step = prev - p.data()[0];
    prev = p.data()[0];
  }
  CHECK(last_step == doctest::Approx(lr).epsilon(1e-3));
}

TEST_CASE("one step on a quadratic moves toward the minimum") {
  auto x = Tensor<double>::from_data({1}, {1.0});
  Adam<double> opt({x});
  Tape<double> tape;
  Tensor<double> y;
  {
    TapeScope<double> scope(tape);
    x.set_requires_grad(true);
    y = sum_all(mul(x, x));
  }
  tape.backward(y);
  opt.step(0.1);
  CHECK(x.data()[0] < 1.0);
  CHECK(x.data()[0] > 0.0);
}

TEST_CASE("update matches an independently coded reference") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.003;
  auto p = Tensor<double>::from_data({2}, {0.4, -1.3});
  Adam<double> opt({p});

  double rp[2] = {0.4, -1.3};
  double rm[2] = {0, 0}, rv[2] = {0, 0};
  const std::vector<std::vector<double>> grads{{0.2, -0.7}, {-1.1, 0.3}, {0.05, 0.05}, {2.0, -2.0}};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    p.accumulate_grad(std::span<const double>(grads[t]));
    opt.step(lr);
    for (int j = 0; j < 2; ++j) {
      rm[j] = b1 * rm[j] + (1 - b1) * grads[t][static_cast<std::size_t>(j)];
      rv[j] = b2 * rv[j] + (1 - b2) * grads[t][static_cast<std::size_t>(j)] * grads[t][static_cast<std::size_t>(j)];
      const double mhat = rm[j] / (1 - std::pow(b1, static_cast<double>(t) + 1));
      const double vhat = rv[j] / (1 - std::pow(b2, static_cast<double>(t) + 1));
      rp[j] -= lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(p.data()[static_cast<std::size_t>(j)] == doctest::Approx(rp[j]).epsilon(1e-14));
    }
  }
}

TEST_CASE("non-finite gradients abort the step") {
  auto p = Tensor<double>::from_data({2}, {1.0, 1.0});
  Adam<double> opt({p});
  std::vector<double> g{1.0, std::numeric_limits<double>::quiet_NaN()};
  p.accumulate_grad(g);
  CHECK_THROWS_AS(opt.step(0.1), DivergenceError);
}

TEST_CASE("gradients are consumed by the step") {
  auto p = Tensor<double>::from_data({1}, {1.0});
  Adam<double> opt({p});
  std::vector<double> g{1.0};
  p.accumulate_grad(g);
  opt.step(0.1);
  CHECK_FALSE(p.has_grad());
}
