#pragma once

// The differentiable operation set used by the network and its losses.
// Channel-first layout throughout: [..., C, V] with the vertex axis last.

#include <cstddef>

#include "aniformer/tensor.hpp"

namespace aniformer {

// Per-vertex affine map (a 1x1 Conv1D): out[..., :, v] = W x[..., :, v] + b.
// x: [..., C_in, V], W: [C_out, C_in], b: [C_out].
template <typename Real>
Tensor<Real> pointwise_linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias);

// Matrix product over the trailing two axes with identical leading extents.
// The transpose flags act on the trailing two axes of the respective operand.
template <typename Real>
Tensor<Real> batch_matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool transpose_a = false,
                          bool transpose_b = false);

// Max-shifted softmax along `axis` (negative counts from the end).
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::ptrdiff_t axis);

inline constexpr double kInstanceNormEps = 1e-5;

// Standardises every row of the last (vertex) axis with the population
// variance: (x - mean) / sqrt(var + eps). Requires at least two vertices.
template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, double eps = kInstanceNormEps);

// Elementwise binaries. Operands either share a shape or one of them equals
// the other's trailing extents, optionally padded with leading 1s.
template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b);
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b);

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x);  // derivative at exactly 0 is 0
template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x);  // strictly inside (-1, 1)
template <typename Real>
Tensor<Real> abs(const Tensor<Real>& x);  // derivative at exactly 0 is 0
template <typename Real>
Tensor<Real> square(const Tensor<Real>& x);

// gamma * x for a learnable single-element gamma.
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, const Tensor<Real>& gamma);
template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor);

// Vertex-axis max pooling: [..., C, V1] -> [..., C, V2]. Output vertex i is
// the channel-wise max over the contiguous chunk [floor(i V1/V2),
// floor((i+1) V1/V2)). Ties resolve to the lowest index.
template <typename Real>
Tensor<Real> max_pool_vertices(const Tensor<Real>& x, std::size_t out_vertices);

// Adds row t of `table` ([T_max, C]) to every vertex of frame t of
// x ([N, T, C, V]).
template <typename Real>
Tensor<Real> add_frame_embedding(const Tensor<Real>& x, const Tensor<Real>& table);

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x);  // -> [1]
template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x);  // -> [1]
// Averages over `axis`, removing it.
template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::ptrdiff_t axis);

// Same storage order, new extents.
template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape);

// Convenience for composing expressions.
template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) {
  return add(a, b);
}
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) {
  return sub(a, b);
}
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) {
  return mul(a, b);
}

}  // namespace aniformer
