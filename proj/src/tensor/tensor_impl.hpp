#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "aniformer/tensor.hpp"

namespace aniformer::detail {

template <typename Real>
struct Node {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl<Real>>> inputs;
  BackwardFn<Real> backward;
};

template <typename Real>
struct TensorImpl {
  Shape shape;
  Buffer<Real> data;
  Buffer<Real> grad;  // empty until something flows into it
  bool requires_grad = false;
  bool consumed = false;
  std::string name;
  std::shared_ptr<Node<Real>> grad_fn;

  std::span<Real> ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

}  // namespace aniformer::detail
