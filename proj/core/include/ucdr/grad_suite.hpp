#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ucdr {

struct GradCaseResult {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t coords_checked = 0;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradCaseResult> cases;
  bool all_passed() const {
    for (const auto& c : cases) {
      if (!c.passed) return false;
    }
    return !cases.empty();
  }
  double worst() const {
    double w = 0.0;
    for (const auto& c : cases) w = c.max_rel_error > w ? c.max_rel_error : w;
    return w;
  }
};

// Central-difference audit of every trainable path, in 64-bit precision on
// miniature configurations: the ranking loss against its anchor, the
// image-text alignment loss, the full phase-1 objective against the prompt
// bank and text context, the phase-2 objective through masking and
// attention against the generator, and the text-context path on its own.
// Each case is checked at three construction seeds times five perturbed
// parameter points.
GradSuiteResult run_grad_suite(double tolerance = 1e-5);

}  // namespace ucdr
