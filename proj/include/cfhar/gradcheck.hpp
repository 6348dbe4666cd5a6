#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cfhar/autograd.hpp"

namespace cfhar {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t checked = 0;
  std::string worst;  // "input[i] element j"

  bool ok(double tolerance) const { return max_rel_error < tolerance; }
};

struct GradCheckOptions {
  double step = 1e-5;
  // |analytic - numeric| / max(|analytic|, |numeric|, abs_floor)
  double abs_floor = 1e-6;
  // 0 checks every element; otherwise an evenly strided subset per input.
  std::size_t max_elements_per_input = 0;
};

/// Compares reverse-mode gradients of the scalar loss_fn() with respect to each
/// input against central finite differences. loss_fn must read the inputs'
/// current values on every call.
GradCheckReport grad_check(const std::function<Var<double>()>& loss_fn, std::vector<Var<double>> inputs,
                           const GradCheckOptions& options = {});

}  // namespace cfhar
