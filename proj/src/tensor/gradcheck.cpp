#include "aniformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "aniformer/errors.hpp"

namespace aniformer {

GradcheckReport gradcheck(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options) {
  for (auto& in : inputs) {
    in.zero_grad();
    in.set_requires_grad(true);
  }
  const Tensor<double> y = f(inputs);
  if (y.size() != 1) throw DimensionError("gradcheck: function must return a single value");
  y.backward();

  GradcheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    auto& in = inputs[k];
    std::vector<double> analytic(in.size(), 0.0);
    if (in.has_grad()) std::copy(in.grad().begin(), in.grad().end(), analytic.begin());

    GradcheckInputReport entry;
    entry.label = in.name().empty() ? "input " + std::to_string(k) : in.name();
    auto values = in.mutable_data();
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + options.step;
      const double up = f(inputs).item();
      values[i] = saved - options.step;
      const double down = f(inputs).item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.floor});
      const double err = std::abs(analytic[i] - numeric) / denom;
      if (i == 0 || err > entry.max_relative_error) {
        entry.max_relative_error = err;
        entry.worst_index = i;
        entry.analytic_at_worst = analytic[i];
        entry.numeric_at_worst = numeric;
      }
    }
    report.worst = std::max(report.worst, entry.max_relative_error);
    report.inputs.push_back(std::move(entry));
  }
  report.passed = report.worst < options.tolerance;
  for (auto& in : inputs) in.zero_grad();
  return report;
}

}  // namespace aniformer
