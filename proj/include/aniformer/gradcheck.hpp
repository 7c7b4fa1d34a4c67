#pragma once

#include <functional>
#include <string>
#include <vector>

#include "aniformer/tensor.hpp"

namespace aniformer {

struct GradcheckOptions {
  double step = 1e-5;       // central-difference half width
  double tolerance = 1e-6;  // max relative error allowed per input
  // Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
  // the floor keeps round-off on vanishing derivatives from reading as error.
  double floor = 1e-8;
};

struct GradcheckInputReport {
  std::string label;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckInputReport> inputs;
  double worst = 0.0;
  bool passed = true;
};

using ScalarFunction = std::function<Tensor<double>(const std::vector<Tensor<double>>&)>;

// Compares reverse-mode gradients of a scalar function against central
// differences, element by element, for every input. Inputs are perturbed in
// place and restored; their gradients are overwritten. 64-bit only.
GradcheckReport gradcheck(const ScalarFunction& f, std::vector<Tensor<double>> inputs,
                          const GradcheckOptions& options = {});

}  // namespace aniformer
