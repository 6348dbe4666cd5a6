#include "cfhar/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace cfhar {

GradCheckReport grad_check(const std::function<Var<double>()>& loss_fn, std::vector<Var<double>> inputs,
                           const GradCheckOptions& options) {
  for (auto& in : inputs) {
    if (!in.requires_grad()) throw ConfigError("grad_check: every input must require gradients");
    in.zero_grad();
  }
  Var<double> loss = loss_fn();
  backward(loss);

  std::vector<Tensor<double>> analytic;
  analytic.reserve(inputs.size());
  for (auto& in : inputs) analytic.push_back(in.has_grad() ? in.grad() : Tensor<double>(in.shape()));

  GradCheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor<double>& value = inputs[k].mutable_value();
    const std::size_t n = value.size();
    std::size_t stride = 1;
    if (options.max_elements_per_input > 0 && n > options.max_elements_per_input) {
      stride = (n + options.max_elements_per_input - 1) / options.max_elements_per_input;
    }
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = value[i];
      value[i] = saved + options.step;
      const double up = loss_fn().item();
      value[i] = saved - options.step;
      const double down = loss_fn().item();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      ++report.checked;
      report.max_abs_error = std::max(report.max_abs_error, abs_err);
      if (rel_err > report.max_rel_error) {
        report.max_rel_error = rel_err;
        report.worst = "input[" + std::to_string(k) + "] element " + std::to_string(i);
      }
    }
  }
  return report;
}

}  // namespace cfhar
