#pragma once

#include <random>
#include <vector>

#include "aniformer/tensor.hpp"

namespace testing {

template <typename Real = double>
aniformer::Tensor<Real> random_tensor(aniformer::Shape shape, unsigned seed, double lo = -2.0, double hi = 2.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<Real> values(aniformer::element_count(shape));
  for (auto& v : values) v = static_cast<Real>(dist(rng));
  return aniformer::Tensor<Real>(std::move(shape), std::move(values));
}

template <typename Real>
double max_abs_diff(std::span<const Real> a, std::span<const Real> b) {
  double worst = 0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

}  // namespace testing
