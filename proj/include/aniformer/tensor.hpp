#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor is a shared handle: copies alias the same storage, which is what
// lets parameters be updated in place by an optimizer while graphs built from
// them keep referring to the same node. Operations that see at least one input
// with requires_grad() record a node holding their inputs and a backward rule;
// backward() orders the reachable nodes topologically and runs each rule
// exactly once.

#include <cstddef>
#include <functional>
#include <iosfwd>
#include <initializer_list>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace aniformer {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

// Every tensor buffer starts on a 64-byte boundary. Vectorized kernels choose
// their scalar prologue from the address, so alignment that varied between
// allocations would vary the summation order and break run-to-run
// bit-reproducibility.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() noexcept = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  friend bool operator==(const AlignedAllocator&, const AlignedAllocator<U>&) noexcept {
    return true;
  }
};

template <typename Real>
using Buffer = std::vector<Real, AlignedAllocator<Real>>;

enum class GradMode {
  kFresh,       // every leaf gradient reached must be empty beforehand
  kAccumulate,  // add into existing leaf gradients
};

template <typename Real>
class Tensor;

namespace detail {

template <typename Real>
struct TensorImpl;

template <typename Real>
struct Node;

}  // namespace detail

// Handed to a backward rule. Index i refers to the i-th input given to
// make_op_result.
template <typename Real>
class BackwardContext {
 public:
  BackwardContext(const detail::TensorImpl<Real>& output, const detail::Node<Real>& node)
      : output_(output), node_(node) {}

  std::span<const Real> grad_output() const;
  std::span<const Real> output() const;
  const Shape& output_shape() const;
  std::size_t input_count() const;
  const Shape& input_shape(std::size_t i) const;
  std::span<const Real> input(std::size_t i) const;
  bool needs_grad(std::size_t i) const;
  // Gradient buffer of input i, zero-initialised on first access. Rules add
  // into it; never overwrite.
  std::span<Real> input_grad(std::size_t i) const;

 private:
  const detail::TensorImpl<Real>& output_;
  const detail::Node<Real>& node_;
};

template <typename Real>
using BackwardFn = std::function<void(const BackwardContext<Real>&)>;

template <typename Real>
class Tensor {
 public:
  using value_type = Real;

  Tensor();
  Tensor(Shape shape, Buffer<Real> values);
  Tensor(Shape shape, const std::vector<Real>& values);
  Tensor(Shape shape, std::initializer_list<Real> values);

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, Real value);
  static Tensor scalar(Real value);

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t extent(std::ptrdiff_t axis) const;  // negative axes count from the end
  std::size_t size() const;

  std::span<const Real> data() const;
  // Writable view of the storage. Mutating a tensor that an unconsumed graph
  // still references invalidates that graph's gradients.
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);
  const std::string& name() const;
  Tensor& set_name(std::string name);

  bool has_grad() const;
  std::span<const Real> grad() const;
  void zero_grad();  // drops the buffer; has_grad() becomes false

  // Runs reverse accumulation from this single-element tensor. The recorded
  // graph is released afterwards; a second call on the same result throws.
  void backward(GradMode mode = GradMode::kFresh) const;

  // Same storage contents, no history, requires_grad false.
  Tensor detach() const;
  // Deep copy of the values (and the requires_grad flag), no history.
  Tensor clone() const;

  bool is_leaf() const;
  bool same_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }

  // Every finite check in one place; used by anomaly mode and the optimizer.
  bool all_finite() const;

  const std::shared_ptr<detail::TensorImpl<Real>>& impl() const noexcept { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl<Real>> impl);
  std::shared_ptr<detail::TensorImpl<Real>> impl_;

  template <typename R>
  friend Tensor<R> make_op_result(std::string_view, Shape, Buffer<R>,
                                  const std::vector<Tensor<R>>&, BackwardFn<R>);
};

// Builds the result of a differentiable operation. When no input requires a
// gradient (or recording is disabled) the backward rule is dropped and the
// result is a plain constant.
template <typename Real>
Tensor<Real> make_op_result(std::string_view op, Shape shape, Buffer<Real> values,
                            const std::vector<Tensor<Real>>& inputs, BackwardFn<Real> backward);

// Reverse topological order of the operations reachable from `root`, as op
// names. This is the computation record backward() walks.
template <typename Real>
std::vector<std::string> computation_record(const Tensor<Real>& root);

// While alive on a thread, operations do not record history.
// Flushes subnormal floating-point results and operands to zero while alive
// (x86 SSE control register; a no-op elsewhere). Saturated softmax rows
// otherwise fill whole kernels with subnormals, which run many times slower.
class FlushDenormalsGuard {
 public:
  FlushDenormalsGuard();
  ~FlushDenormalsGuard();
  FlushDenormalsGuard(const FlushDenormalsGuard&) = delete;
  FlushDenormalsGuard& operator=(const FlushDenormalsGuard&) = delete;

 private:
  unsigned previous_;
};

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_recording_enabled();

// When enabled (per thread), every operation checks its result for NaN/Inf
// and throws NumericalError naming the operation.
void set_anomaly_detection(bool enabled);
bool anomaly_detection_enabled();

// Flat text listing: one shape line, then each value at 17 significant digits
// on its own line.
template <typename Real>
void dump_text(const Tensor<Real>& tensor, std::ostream& out);

extern template class Tensor<float>;
extern template class Tensor<double>;
extern template class BackwardContext<float>;
extern template class BackwardContext<double>;

}  // namespace aniformer
