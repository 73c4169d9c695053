#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ucdr/errors.hpp"
#include "ucdr/tensor.hpp"

namespace ucdr {

template <typename T>
struct GradCheckReport {
  T max_rel_error = T(0);
  std::size_t worst_point = 0;
  std::size_t worst_coord = 0;
  std::size_t coords_checked = 0;
};

// Central-difference gradient check. `f` must be a pure function of the data
// held by `points` (it is re-evaluated after perturbing single coordinates in
// place) and must return a scalar. Relative error per coordinate is
// |analytic - fd| / max(1, |analytic|, |fd|); the max over all coordinates is
// reported.
template <typename T>
GradCheckReport<T> grad_check(const std::function<Tensor<T>()>& f, std::span<Tensor<T>> points, T step) {
  if (!(step > T(0)) || step > T(1e-2)) {
    throw ContractError("grad_check: step must lie in (0, 1e-2], got " + std::to_string(static_cast<double>(step)));
  }
  if (points.empty()) throw ContractError("grad_check: no points to perturb");

  for (Tensor<T>& p : points) {
    p.set_requires_grad(true);
    p.zero_grad();
  }

  Tape<T> tape;
  Tensor<T> y;
  {
    TapeScope<T> scope(tape);
    y = f();
  }
  if (y.size() != 1) throw ContractError("grad_check: f must return a scalar");
  tape.backward(y);

  std::vector<std::vector<T>> analytic;
  analytic.reserve(points.size());
  for (const Tensor<T>& p : points) {
    if (p.has_grad()) {
      analytic.emplace_back(p.grad().begin(), p.grad().end());
    } else {
      analytic.emplace_back(p.size(), T(0));
    }
  }

  GradCheckReport<T> report;
  GradPause<T> pause;
  for (std::size_t pi = 0; pi < points.size(); ++pi) {
    auto data = points[pi].data();
    for (std::size_t ci = 0; ci < data.size(); ++ci) {
      const T original = data[ci];
      data[ci] = original + step;
      const T plus = f().item();
      data[ci] = original - step;
      const T minus = f().item();
      data[ci] = original;
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        throw DegenerateInputError("grad_check: non-finite value at perturbed point " + std::to_string(pi) + "/" +
                                   std::to_string(ci));
      }
      const T fd = (plus - minus) / (T(2) * step);
      const T a = analytic[pi][ci];
      const T denom = std::max(T(1), std::max(std::abs(a), std::abs(fd)));
      const T rel = std::abs(a - fd) / denom;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_point = pi;
        report.worst_coord = ci;
      }
      ++report.coords_checked;
    }
  }
  return report;
}

}  // namespace ucdr
