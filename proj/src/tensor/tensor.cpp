#include "aniformer/tensor.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "aniformer/errors.hpp"
#include "tensor_impl.hpp"

#if defined(__SSE__) || defined(_M_X64)
#include <xmmintrin.h>
#endif

namespace aniformer {

namespace {

thread_local bool g_grad_enabled = true;
thread_local bool g_anomaly = false;

}  // namespace

std::size_t element_count(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

#if defined(__SSE__) || defined(_M_X64)
// Flush-to-zero (bit 15) and denormals-are-zero (bit 6).
constexpr unsigned kFlushBits = 0x8040u;
FlushDenormalsGuard::FlushDenormalsGuard() : previous_(_mm_getcsr()) { _mm_setcsr(previous_ | kFlushBits); }
FlushDenormalsGuard::~FlushDenormalsGuard() { _mm_setcsr(previous_); }
#else
FlushDenormalsGuard::FlushDenormalsGuard() : previous_(0) {}
FlushDenormalsGuard::~FlushDenormalsGuard() = default;
#endif

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }
bool grad_recording_enabled() { return g_grad_enabled; }

void set_anomaly_detection(bool enabled) { g_anomaly = enabled; }
bool anomaly_detection_enabled() { return g_anomaly; }

// ---------------------------------------------------------------------------
// BackwardContext

template <typename Real>
std::span<const Real> BackwardContext<Real>::grad_output() const {
  return output_.grad;
}

template <typename Real>
std::span<const Real> BackwardContext<Real>::output() const {
  return output_.data;
}

template <typename Real>
const Shape& BackwardContext<Real>::output_shape() const {
  return output_.shape;
}

template <typename Real>
std::size_t BackwardContext<Real>::input_count() const {
  return node_.inputs.size();
}

template <typename Real>
const Shape& BackwardContext<Real>::input_shape(std::size_t i) const {
  return node_.inputs.at(i)->shape;
}

template <typename Real>
std::span<const Real> BackwardContext<Real>::input(std::size_t i) const {
  return node_.inputs.at(i)->data;
}

template <typename Real>
bool BackwardContext<Real>::needs_grad(std::size_t i) const {
  return node_.inputs.at(i)->requires_grad;
}

template <typename Real>
std::span<Real> BackwardContext<Real>::input_grad(std::size_t i) const {
  auto& impl = *node_.inputs.at(i);
  if (!impl.requires_grad) return {};
  return impl.ensure_grad();
}

// ---------------------------------------------------------------------------
// Tensor

template <typename Real>
Tensor<Real>::Tensor() = default;

template <typename Real>
Tensor<Real>::Tensor(std::shared_ptr<detail::TensorImpl<Real>> impl) : impl_(std::move(impl)) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, const std::vector<Real>& values)
    : Tensor(std::move(shape), Buffer<Real>(values.begin(), values.end())) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, std::initializer_list<Real> values)
    : Tensor(std::move(shape), Buffer<Real>(values)) {}

template <typename Real>
Tensor<Real>::Tensor(Shape shape, Buffer<Real> values) {
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_string(shape));
  }
  if (element_count(shape) != values.size()) {
    throw DimensionError("shape " + shape_string(shape) + " needs " +
                         std::to_string(element_count(shape)) + " values, got " +
                         std::to_string(values.size()));
  }
  impl_ = std::make_shared<detail::TensorImpl<Real>>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

template <typename Real>
Tensor<Real> Tensor<Real>::zeros(Shape shape) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), Buffer<Real>(n, Real(0)));
}

template <typename Real>
Tensor<Real> Tensor<Real>::full(Shape shape, Real value) {
  const std::size_t n = element_count(shape);
  return Tensor(std::move(shape), Buffer<Real>(n, value));
}

template <typename Real>
Tensor<Real> Tensor<Real>::scalar(Real value) {
  return Tensor({1}, {value});
}

template <typename Real>
const Shape& Tensor<Real>::shape() const {
  if (!impl_) throw ContractError("use of an undefined tensor");
  return impl_->shape;
}

template <typename Real>
std::size_t Tensor<Real>::extent(std::ptrdiff_t axis) const {
  const auto& s = shape();
  const auto r = static_cast<std::ptrdiff_t>(s.size());
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(s));
  }
  return s[static_cast<std::size_t>(a)];
}

template <typename Real>
std::size_t Tensor<Real>::size() const {
  shape();
  return impl_->data.size();
}

template <typename Real>
std::span<const Real> Tensor<Real>::data() const {
  shape();
  return impl_->data;
}

template <typename Real>
std::span<Real> Tensor<Real>::mutable_data() {
  shape();
  return impl_->data;
}

template <typename Real>
Real Tensor<Real>::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl_->data[0];
}

template <typename Real>
Real Tensor<Real>::at(std::initializer_list<std::size_t> index) const {
  const auto& s = shape();
  if (index.size() != s.size()) {
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " + shape_string(s));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw DimensionError("index out of range for shape " + shape_string(s));
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

template <typename Real>
bool Tensor<Real>::requires_grad() const {
  return impl_ && impl_->requires_grad;
}

template <typename Real>
Tensor<Real>& Tensor<Real>::set_requires_grad(bool flag) {
  shape();
  if (impl_->grad_fn) throw ContractError("requires_grad can only be set on leaf tensors");
  impl_->requires_grad = flag;
  return *this;
}

template <typename Real>
const std::string& Tensor<Real>::name() const {
  shape();
  return impl_->name;
}

template <typename Real>
Tensor<Real>& Tensor<Real>::set_name(std::string name) {
  shape();
  impl_->name = std::move(name);
  return *this;
}

template <typename Real>
bool Tensor<Real>::has_grad() const {
  return impl_ && !impl_->grad.empty();
}

template <typename Real>
std::span<const Real> Tensor<Real>::grad() const {
  if (!has_grad()) throw ContractError("tensor '" + name() + "' has no gradient");
  return impl_->grad;
}

template <typename Real>
void Tensor<Real>::zero_grad() {
  if (impl_) {
    impl_->grad.clear();
    impl_->grad.shrink_to_fit();
  }
}

template <typename Real>
bool Tensor<Real>::is_leaf() const {
  return impl_ && !impl_->grad_fn;
}

template <typename Real>
Tensor<Real> Tensor<Real>::detach() const {
  return Tensor(shape(), impl_->data);
}

template <typename Real>
Tensor<Real> Tensor<Real>::clone() const {
  Tensor copy(shape(), impl_->data);
  copy.impl_->requires_grad = impl_->requires_grad && !impl_->grad_fn;
  copy.impl_->name = impl_->name;
  return copy;
}

template <typename Real>
bool Tensor<Real>::all_finite() const {
  return std::all_of(impl_->data.begin(), impl_->data.end(),
                     [](Real v) { return std::isfinite(v); });
}

namespace {

// Iterative depth-first search; returns nodes with a backward rule in
// post-order (inputs before consumers).
template <typename Real>
std::vector<detail::TensorImpl<Real>*> topological_order(detail::TensorImpl<Real>* root) {
  enum class Mark : unsigned char { kOpen, kDone };
  std::unordered_map<detail::TensorImpl<Real>*, Mark> marks;
  std::vector<detail::TensorImpl<Real>*> order;
  struct Frame {
    detail::TensorImpl<Real>* impl;
    std::size_t next_input;
  };
  std::vector<Frame> stack;
  if (!root->grad_fn) return order;
  stack.push_back({root, 0});
  marks[root] = Mark::kOpen;
  while (!stack.empty()) {
    Frame& top = stack.back();
    const auto& inputs = top.impl->grad_fn->inputs;
    if (top.next_input < inputs.size()) {
      detail::TensorImpl<Real>* child = inputs[top.next_input++].get();
      if (!child->grad_fn) continue;
      auto it = marks.find(child);
      if (it == marks.end()) {
        marks.emplace(child, Mark::kOpen);
        stack.push_back({child, 0});
      } else if (it->second == Mark::kOpen) {
        throw std::logic_error("computation record contains a cycle at op '" +
                               child->grad_fn->op + "'");
      }
    } else {
      marks[top.impl] = Mark::kDone;
      order.push_back(top.impl);
      stack.pop_back();
    }
  }
  return order;
}

}  // namespace

template <typename Real>
void Tensor<Real>::backward(GradMode mode) const {
  shape();
  if (impl_->data.size() != 1) {
    throw DimensionError("backward() needs a single-element loss, got shape " + shape_string(impl_->shape));
  }
  if (impl_->consumed) {
    throw ContractError("computation record already consumed by an earlier backward()");
  }
  if (!impl_->requires_grad) {
    throw ContractError("loss does not depend on any tensor that requires a gradient");
  }

  const FlushDenormalsGuard flush;
  const auto order = topological_order(impl_.get());

  if (mode == GradMode::kFresh) {
    auto check = [](const detail::TensorImpl<Real>& leaf) {
      if (!leaf.grad.empty()) {
        throw ContractError("gradient of '" + leaf.name +
                            "' already populated; zero it or use GradMode::kAccumulate");
      }
    };
    if (!impl_->grad_fn) check(*impl_);
    for (auto* impl : order) {
      for (const auto& in : impl->grad_fn->inputs) {
        if (in->requires_grad && !in->grad_fn) check(*in);
      }
    }
  }

  impl_->ensure_grad()[0] += Real(1);

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl<Real>* impl = *it;
    if (impl->grad.empty()) continue;  // no path from the loss carried a contribution
    BackwardContext<Real> ctx(*impl, *impl->grad_fn);
    impl->grad_fn->backward(ctx);
  }

  for (auto* impl : order) {
    impl->grad_fn.reset();
    impl->grad.clear();
    impl->grad.shrink_to_fit();
    impl->requires_grad = false;
    impl->consumed = true;
  }
}

template <typename Real>
Tensor<Real> make_op_result(std::string_view op, Shape shape, Buffer<Real> values,
                            const std::vector<Tensor<Real>>& inputs, BackwardFn<Real> backward) {
  Tensor<Real> out(std::move(shape), std::move(values));
  if (g_anomaly && !out.all_finite()) {
    throw NumericalError("non-finite value produced by op '" + std::string(op) + "'");
  }
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor<Real>& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<detail::Node<Real>>();
  node->op = std::string(op);
  node->inputs.reserve(inputs.size());
  for (const auto& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl_->grad_fn = std::move(node);
  out.impl_->requires_grad = true;
  return out;
}

template <typename Real>
std::vector<std::string> computation_record(const Tensor<Real>& root) {
  std::vector<std::string> ops;
  if (!root.defined()) return ops;
  const auto order = topological_order(root.impl().get());
  for (auto it = order.rbegin(); it != order.rend(); ++it) ops.push_back((*it)->grad_fn->op);
  return ops;
}

template <typename Real>
void dump_text(const Tensor<Real>& tensor, std::ostream& out) {
  const auto& s = tensor.shape();
  out << "shape";
  for (std::size_t e : s) out << ' ' << e;
  out << '\n';
  std::ostringstream line;
  line << std::setprecision(17);
  for (Real v : tensor.data()) {
    line.str({});
    line << static_cast<double>(v);
    out << line.str() << '\n';
  }
}

template class Tensor<float>;
template class Tensor<double>;
template class BackwardContext<float>;
template class BackwardContext<double>;

template Tensor<float> make_op_result(std::string_view, Shape, Buffer<float>,
                                      const std::vector<Tensor<float>>&, BackwardFn<float>);
template Tensor<double> make_op_result(std::string_view, Shape, Buffer<double>,
                                       const std::vector<Tensor<double>>&, BackwardFn<double>);
template std::vector<std::string> computation_record(const Tensor<float>&);
template std::vector<std::string> computation_record(const Tensor<double>&);
template void dump_text(const Tensor<float>&, std::ostream&);
template void dump_text(const Tensor<double>&, std::ostream&);

}  // namespace aniformer
