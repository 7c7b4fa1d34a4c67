#include "aniformer/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "aniformer/errors.hpp"

namespace aniformer {

namespace {

template <typename Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Real>
using MapMat = Eigen::Map<RowMat<Real>>;
template <typename Real>
using ConstMapMat = Eigen::Map<const RowMat<Real>>;
template <typename Real>
using ConstMapVec = Eigen::Map<const Eigen::Matrix<Real, Eigen::Dynamic, 1>>;
template <typename Real>
using MapVec = Eigen::Map<Eigen::Matrix<Real, Eigen::Dynamic, 1>>;

std::size_t normalize_axis(std::ptrdiff_t axis, std::size_t rank, const Shape& shape) {
  const auto r = static_cast<std::ptrdiff_t>(rank);
  const std::ptrdiff_t a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  }
  return static_cast<std::size_t>(a);
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t extent = 1;
  std::size_t inner = 1;
};

AxisSplit split_at(const Shape& shape, std::size_t axis) {
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape strip_leading_ones(const Shape& s) {
  auto it = std::find_if(s.begin(), s.end(), [](std::size_t e) { return e != 1; });
  Shape out(it, s.end());
  return out;
}

bool is_suffix(const Shape& small, const Shape& big) {
  const Shape stripped = strip_leading_ones(small);
  if (stripped.size() > big.size()) return false;
  return std::equal(stripped.rbegin(), stripped.rend(), big.rbegin());
}

// Which operand (if any) is broadcast. Returns the output shape.
enum class Broadcast { kNone, kA, kB };

Broadcast resolve_broadcast(const Shape& a, const Shape& b, const char* op, Shape& out) {
  if (a == b) {
    out = a;
    return Broadcast::kNone;
  }
  const std::size_t na = element_count(a);
  const std::size_t nb = element_count(b);
  if (nb <= na && is_suffix(b, a)) {
    out = a;
    return Broadcast::kB;
  }
  if (na < nb && is_suffix(a, b)) {
    out = b;
    return Broadcast::kA;
  }
  throw DimensionError(std::string(op) + ": shapes " + shape_string(a) + " and " + shape_string(b) +
                       " are not broadcastable by leading-1 extents");
}

template <typename Real, typename Fwd>
Tensor<Real> unary(const char* op, const Tensor<Real>& x, Fwd fwd, BackwardFn<Real> back) {
  Buffer<Real> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(in[i]);
  return make_op_result<Real>(op, x.shape(), std::move(out), {x}, std::move(back));
}

}  // namespace

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> pointwise_linear(const Tensor<Real>& x, const Tensor<Real>& weight, const Tensor<Real>& bias) {
  const Shape& xs = x.shape();
  if (weight.rank() != 2 || bias.rank() != 1 || xs.size() < 2 || weight.extent(0) != bias.extent(0) ||
      xs[xs.size() - 2] != weight.extent(1)) {
    throw DimensionError("pointwise_linear: input " + shape_string(xs) + " incompatible with weight " +
                         shape_string(weight.shape()) + " and bias " + shape_string(bias.shape()));
  }
  const auto c_in = static_cast<Eigen::Index>(weight.extent(1));
  const auto c_out = static_cast<Eigen::Index>(weight.extent(0));
  const auto v = static_cast<Eigen::Index>(xs.back());
  const std::size_t lead = x.size() / static_cast<std::size_t>(c_in * v);

  Shape out_shape = xs;
  out_shape[out_shape.size() - 2] = static_cast<std::size_t>(c_out);
  Buffer<Real> out(lead * static_cast<std::size_t>(c_out * v));

  ConstMapMat<Real> w(weight.data().data(), c_out, c_in);
  ConstMapVec<Real> b(bias.data().data(), c_out);
  for (std::size_t l = 0; l < lead; ++l) {
    ConstMapMat<Real> xl(x.data().data() + l * c_in * v, c_in, v);
    MapMat<Real> ol(out.data() + l * c_out * v, c_out, v);
    ol.noalias() = w * xl;
    ol.colwise() += b;
  }

  return make_op_result<Real>(
      "pointwise_linear", std::move(out_shape), std::move(out), {x, weight, bias},
      [=](const BackwardContext<Real>& ctx) {
        const Real* g = ctx.grad_output().data();
        ConstMapMat<Real> w(ctx.input(1).data(), c_out, c_in);
        const Real* xd = ctx.input(0).data();
        if (ctx.needs_grad(0)) {
          Real* dx = ctx.input_grad(0).data();
          for (std::size_t l = 0; l < lead; ++l) {
            MapMat<Real>(dx + l * c_in * v, c_in, v).noalias() +=
                w.transpose() * ConstMapMat<Real>(g + l * c_out * v, c_out, v);
          }
        }
        if (ctx.needs_grad(1)) {
          MapMat<Real> dw(ctx.input_grad(1).data(), c_out, c_in);
          for (std::size_t l = 0; l < lead; ++l) {
            dw.noalias() += ConstMapMat<Real>(g + l * c_out * v, c_out, v) *
                            ConstMapMat<Real>(xd + l * c_in * v, c_in, v).transpose();
          }
        }
        if (ctx.needs_grad(2)) {
          MapVec<Real> db(ctx.input_grad(2).data(), c_out);
          for (std::size_t l = 0; l < lead; ++l) {
            db += ConstMapMat<Real>(g + l * c_out * v, c_out, v).rowwise().sum();
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

// out (+)= op(A) op(B) with op selected by the flags; A is ar x ac as stored.
template <typename Real, typename Out>
void gemm(Out&& out, const ConstMapMat<Real>& a, bool ta, const ConstMapMat<Real>& b, bool tb,
          bool accumulate) {
  if (!accumulate) out.setZero();
  if (!ta && !tb) out.noalias() += a * b;
  else if (ta && !tb) out.noalias() += a.transpose() * b;
  else if (!ta && tb) out.noalias() += a * b.transpose();
  else out.noalias() += a.transpose() * b.transpose();
}

}  // namespace

template <typename Real>
Tensor<Real> batch_matmul(const Tensor<Real>& a, const Tensor<Real>& b, bool transpose_a, bool transpose_b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.size() < 2 || as.size() != bs.size() ||
      !std::equal(as.begin(), as.end() - 2, bs.begin())) {
    throw DimensionError("batch_matmul: leading extents of " + shape_string(as) + " and " +
                         shape_string(bs) + " differ");
  }
  const auto ar = static_cast<Eigen::Index>(as[as.size() - 2]);
  const auto ac = static_cast<Eigen::Index>(as.back());
  const auto br = static_cast<Eigen::Index>(bs[bs.size() - 2]);
  const auto bc = static_cast<Eigen::Index>(bs.back());
  const Eigen::Index m = transpose_a ? ac : ar;
  const Eigen::Index k = transpose_a ? ar : ac;
  const Eigen::Index kb = transpose_b ? bc : br;
  const Eigen::Index n = transpose_b ? br : bc;
  if (k != kb) {
    throw DimensionError("batch_matmul: inner extents of " + shape_string(as) + " and " + shape_string(bs) +
                         " do not conform");
  }
  const std::size_t lead = a.size() / static_cast<std::size_t>(ar * ac);
  Shape out_shape(as.begin(), as.end() - 2);
  out_shape.push_back(static_cast<std::size_t>(m));
  out_shape.push_back(static_cast<std::size_t>(n));
  Buffer<Real> out(lead * static_cast<std::size_t>(m * n));
  for (std::size_t l = 0; l < lead; ++l) {
    ConstMapMat<Real> al(a.data().data() + l * ar * ac, ar, ac);
    ConstMapMat<Real> bl(b.data().data() + l * br * bc, br, bc);
    gemm<Real>(MapMat<Real>(out.data() + l * m * n, m, n), al, transpose_a, bl, transpose_b, false);
  }
  const bool ta = transpose_a;
  const bool tb = transpose_b;
  return make_op_result<Real>(
      "batch_matmul", std::move(out_shape), std::move(out), {a, b},
      [=](const BackwardContext<Real>& ctx) {
        const Real* g = ctx.grad_output().data();
        const Real* ad = ctx.input(0).data();
        const Real* bd = ctx.input(1).data();
        for (std::size_t l = 0; l < lead; ++l) {
          ConstMapMat<Real> gl(g + l * m * n, m, n);
          ConstMapMat<Real> al(ad + l * ar * ac, ar, ac);
          ConstMapMat<Real> bl(bd + l * br * bc, br, bc);
          if (ctx.needs_grad(0)) {
            MapMat<Real> da(ctx.input_grad(0).data() + l * ar * ac, ar, ac);
            // d op(A) = G op(B)^T ; if A was transposed, dA = op(B) G^T.
            if (!ta) gemm<Real>(da, gl, false, bl, !tb, true);
            else gemm<Real>(da, bl, tb, gl, true, true);
          }
          if (ctx.needs_grad(1)) {
            MapMat<Real> db(ctx.input_grad(1).data() + l * br * bc, br, bc);
            // d op(B) = op(A)^T G ; if B was transposed, dB = G^T op(A).
            if (!tb) gemm<Real>(db, al, !ta, gl, false, true);
            else gemm<Real>(db, gl, true, al, ta, true);
          }
        }
      });
}

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_at(x.shape(), ax);
  const auto in = x.data();
  Buffer<Real> out(in.size());
  if (s.inner == 1) {
    // Contiguous rows: Eigen's vectorized exp.
    for (std::size_t o = 0; o < s.outer; ++o) {
      const auto row = Eigen::Map<const Eigen::Array<Real, Eigen::Dynamic, 1>>(in.data() + o * s.extent,
                                                                               static_cast<Eigen::Index>(s.extent));
      auto dst = Eigen::Map<Eigen::Array<Real, Eigen::Dynamic, 1>>(out.data() + o * s.extent,
                                                                   static_cast<Eigen::Index>(s.extent));
      dst = (row - row.maxCoeff()).exp();
      // Double denominator, one rounding per entry: rows sum to 1 within ~ulp.
      const double total = dst.template cast<double>().sum();
      dst = (dst.template cast<double>() / total).template cast<Real>();
    }
  }
  for (std::size_t o = 0; s.inner != 1 && o < s.outer; ++o) {
    for (std::size_t i = 0; i < s.inner; ++i) {
      const std::size_t base = o * s.extent * s.inner + i;
      Real mx = -std::numeric_limits<Real>::infinity();
      for (std::size_t j = 0; j < s.extent; ++j) mx = std::max(mx, in[base + j * s.inner]);
      double total = 0;
      for (std::size_t j = 0; j < s.extent; ++j) {
        const Real e = std::exp(in[base + j * s.inner] - mx);
        out[base + j * s.inner] = e;
        total += e;
      }
      for (std::size_t j = 0; j < s.extent; ++j) {
        out[base + j * s.inner] = static_cast<Real>(out[base + j * s.inner] / total);
      }
    }
  }
  return make_op_result<Real>("softmax", x.shape(), std::move(out), {x}, [s](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    const auto y = ctx.output();
    auto dx = ctx.input_grad(0);
    if (s.inner == 1) {
      for (std::size_t o = 0; o < s.outer; ++o) {
        const Real* __restrict gr = g.data() + o * s.extent;
        const Real* __restrict yr = y.data() + o * s.extent;
        Real* __restrict dr = dx.data() + o * s.extent;
        Real dot = 0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += gr[j] * yr[j];
        for (std::size_t j = 0; j < s.extent; ++j) dr[j] += yr[j] * (gr[j] - dot);
      }
      return;
    }
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t i = 0; i < s.inner; ++i) {
        const std::size_t base = o * s.extent * s.inner + i;
        Real dot = 0;
        for (std::size_t j = 0; j < s.extent; ++j) dot += g[base + j * s.inner] * y[base + j * s.inner];
        for (std::size_t j = 0; j < s.extent; ++j) {
          const std::size_t p = base + j * s.inner;
          dx[p] += y[p] * (g[p] - dot);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> instance_norm(const Tensor<Real>& x, double eps) {
  if (x.rank() < 1) throw DimensionError("instance_norm: scalar input");
  const std::size_t v = x.shape().back();
  if (v < 2) {
    throw DimensionError("instance_norm: degenerate vertex axis (extent " + std::to_string(v) + ") in " +
                         shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / v;
  const auto in = x.data();
  Buffer<Real> out(in.size());
  std::vector<Real> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Real* xr = in.data() + r * v;
    Real mu = 0;
    for (std::size_t i = 0; i < v; ++i) mu += xr[i];
    mu /= static_cast<Real>(v);
    Real var = 0;
    for (std::size_t i = 0; i < v; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<Real>(v);
    const Real inv = Real(1) / std::sqrt(var + static_cast<Real>(eps));
    inv_std[r] = inv;
    Real* yr = out.data() + r * v;
    for (std::size_t i = 0; i < v; ++i) yr[i] = (xr[i] - mu) * inv;
  }
  return make_op_result<Real>(
      "instance_norm", x.shape(), std::move(out), {x},
      [v, rows, inv_std = std::move(inv_std)](const BackwardContext<Real>& ctx) {
        const auto g = ctx.grad_output();
        const auto y = ctx.output();
        auto dx = ctx.input_grad(0);
        const Real inv_v = Real(1) / static_cast<Real>(v);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * v;
          Real g_mean = 0;
          Real gy_mean = 0;
          for (std::size_t i = 0; i < v; ++i) {
            g_mean += g[base + i];
            gy_mean += g[base + i] * y[base + i];
          }
          g_mean *= inv_v;
          gy_mean *= inv_v;
          for (std::size_t i = 0; i < v; ++i) {
            dx[base + i] += inv_std[r] * (g[base + i] - g_mean - y[base + i] * gy_mean);
          }
        }
      });
}

// ---------------------------------------------------------------------------

namespace {

template <typename Real>
void reduce_into(std::span<Real> small, std::span<const Real> big_values) {
  const std::size_t s = small.size();
  for (std::size_t base = 0; base < big_values.size(); base += s) {
    const Real* src = big_values.data() + base;
    for (std::size_t j = 0; j < s; ++j) small[j] += src[j];
  }
}

// Visits out[i] = f(a[i mod na], b[i mod nb]) where one operand spans the
// output and the other repeats over it. Block loops avoid per-element modulo.
template <typename Body>
void broadcast_loop(std::size_t n, std::size_t na, std::size_t nb, Body body) {
  const std::size_t s = std::min(na, nb);
  for (std::size_t base = 0; base < n; base += s) {
    const std::size_t ia = na == n ? base : 0;
    const std::size_t ib = nb == n ? base : 0;
    for (std::size_t j = 0; j < s; ++j) body(base + j, ia + j, ib + j);
  }
}

}  // namespace

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  Shape out_shape;
  const Broadcast mode = resolve_broadcast(a.shape(), b.shape(), "add", out_shape);
  const Real* ad = a.data().data();
  const Real* bd = b.data().data();
  Buffer<Real> out(element_count(out_shape));
  Real* o = out.data();
  broadcast_loop(out.size(), a.size(), b.size(),
                 [=](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = ad[ia] + bd[ib]; });
  return make_op_result<Real>("add", std::move(out_shape), std::move(out), {a, b},
                              [mode](const BackwardContext<Real>& ctx) {
                                const auto g = ctx.grad_output();
                                for (std::size_t k = 0; k < 2; ++k) {
                                  if (!ctx.needs_grad(k)) continue;
                                  auto d = ctx.input_grad(k);
                                  const bool small = (k == 0 && mode == Broadcast::kA) ||
                                                     (k == 1 && mode == Broadcast::kB);
                                  if (small) {
                                    reduce_into<Real>(d, g);
                                  } else {
                                    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                  }
                                }
                              });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  Shape out_shape;
  const Broadcast mode = resolve_broadcast(a.shape(), b.shape(), "sub", out_shape);
  const Real* ad = a.data().data();
  const Real* bd = b.data().data();
  Buffer<Real> out(element_count(out_shape));
  Real* o = out.data();
  broadcast_loop(out.size(), a.size(), b.size(),
                 [=](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = ad[ia] - bd[ib]; });
  return make_op_result<Real>("sub", std::move(out_shape), std::move(out), {a, b},
                              [mode](const BackwardContext<Real>& ctx) {
                                const auto g = ctx.grad_output();
                                if (ctx.needs_grad(0)) {
                                  auto d = ctx.input_grad(0);
                                  if (mode == Broadcast::kA) reduce_into<Real>(d, g);
                                  else for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                }
                                if (ctx.needs_grad(1)) {
                                  Real* d = ctx.input_grad(1).data();
                                  const std::size_t nb = ctx.input(1).size();
                                  broadcast_loop(g.size(), g.size(), nb,
                                                 [&](std::size_t i, std::size_t, std::size_t ib) { d[ib] -= g[i]; });
                                }
                              });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  Shape out_shape;
  resolve_broadcast(a.shape(), b.shape(), "mul", out_shape);
  const Real* ad = a.data().data();
  const Real* bd = b.data().data();
  Buffer<Real> out(element_count(out_shape));
  Real* o = out.data();
  broadcast_loop(out.size(), a.size(), b.size(),
                 [=](std::size_t i, std::size_t ia, std::size_t ib) { o[i] = ad[ia] * bd[ib]; });
  return make_op_result<Real>("mul", std::move(out_shape), std::move(out), {a, b},
                              [](const BackwardContext<Real>& ctx) {
                                const Real* g = ctx.grad_output().data();
                                const std::size_t n = ctx.grad_output().size();
                                const Real* av = ctx.input(0).data();
                                const Real* bv = ctx.input(1).data();
                                const std::size_t na = ctx.input(0).size();
                                const std::size_t nb = ctx.input(1).size();
                                if (ctx.needs_grad(0)) {
                                  Real* d = ctx.input_grad(0).data();
                                  broadcast_loop(n, na, nb, [=](std::size_t i, std::size_t ia, std::size_t ib) {
                                    d[ia] += g[i] * bv[ib];
                                  });
                                }
                                if (ctx.needs_grad(1)) {
                                  Real* d = ctx.input_grad(1).data();
                                  broadcast_loop(n, na, nb, [=](std::size_t i, std::size_t ia, std::size_t ib) {
                                    d[ib] += g[i] * av[ia];
                                  });
                                }
                              });
}

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& x) {
  return unary<Real>("relu", x, [](Real v) { return v > Real(0) ? v : Real(0); },
                     [](const BackwardContext<Real>& ctx) {
                       const std::size_t n = ctx.grad_output().size();
                       const Real* __restrict g = ctx.grad_output().data();
                       const Real* __restrict in = ctx.input(0).data();
                       Real* __restrict d = ctx.input_grad(0).data();
                       for (std::size_t i = 0; i < n; ++i) d[i] += in[i] > Real(0) ? g[i] : Real(0);
                     });
}

template <typename Real>
Tensor<Real> tanh(const Tensor<Real>& x) {
  // Saturated results are held one ulp inside (-1, 1).
  const Real below_one = std::nextafter(Real(1), Real(0));
  return unary<Real>("tanh", x, [below_one](Real v) { return std::clamp(std::tanh(v), -below_one, below_one); },
                     [](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    const auto y = ctx.output();
    auto d = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (Real(1) - y[i] * y[i]);
  });
}

template <typename Real>
Tensor<Real> abs(const Tensor<Real>& x) {
  return unary<Real>("abs", x, [](Real v) { return std::abs(v); }, [](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    const auto in = ctx.input(0);
    auto d = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (in[i] > Real(0)) d[i] += g[i];
      else if (in[i] < Real(0)) d[i] -= g[i];
    }
  });
}

template <typename Real>
Tensor<Real> square(const Tensor<Real>& x) {
  return unary<Real>("square", x, [](Real v) { return v * v; }, [](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    const auto in = ctx.input(0);
    auto d = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += Real(2) * in[i] * g[i];
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, const Tensor<Real>& gamma) {
  if (gamma.size() != 1) {
    throw DimensionError("scale: gamma must hold one value, got shape " + shape_string(gamma.shape()));
  }
  const Real gv = gamma.data()[0];
  Buffer<Real> out(x.data().begin(), x.data().end());
  for (Real& v : out) v *= gv;
  return make_op_result<Real>("scale", x.shape(), std::move(out), {x, gamma}, [](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    const auto xv = ctx.input(0);
    const Real gv = ctx.input(1)[0];
    if (ctx.needs_grad(0)) {
      auto d = ctx.input_grad(0);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += gv * g[i];
    }
    if (ctx.needs_grad(1)) {
      Real acc = 0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * xv[i];
      ctx.input_grad(1)[0] += acc;
    }
  });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& x, Real factor) {
  return unary<Real>("scale_const", x, [factor](Real v) { return v * factor; },
                     [factor](const BackwardContext<Real>& ctx) {
                       const auto g = ctx.grad_output();
                       auto d = ctx.input_grad(0);
                       for (std::size_t i = 0; i < g.size(); ++i) d[i] += factor * g[i];
                     });
}

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> max_pool_vertices(const Tensor<Real>& x, std::size_t out_vertices) {
  if (x.rank() < 1) throw DimensionError("max_pool_vertices: scalar input");
  const std::size_t v1 = x.shape().back();
  if (out_vertices == 0) throw DimensionError("max_pool_vertices: zero output vertices");
  if (v1 < out_vertices) {
    throw DimensionError("max_pool_vertices: upsampling unsupported (" + std::to_string(v1) + " -> " +
                         std::to_string(out_vertices) + " vertices)");
  }
  const std::size_t v2 = out_vertices;
  const std::size_t rows = x.size() / v1;
  const auto in = x.data();
  Buffer<Real> out(rows * v2);
  std::vector<std::uint32_t> argmax(rows * v2);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < v2; ++i) {
      const std::size_t lo = i * v1 / v2;
      const std::size_t hi = (i + 1) * v1 / v2;
      std::size_t best = lo;
      for (std::size_t j = lo + 1; j < hi; ++j) {
        if (in[r * v1 + j] > in[r * v1 + best]) best = j;
      }
      out[r * v2 + i] = in[r * v1 + best];
      argmax[r * v2 + i] = static_cast<std::uint32_t>(best);
    }
  }
  Shape out_shape = x.shape();
  out_shape.back() = v2;
  return make_op_result<Real>("max_pool_vertices", std::move(out_shape), std::move(out), {x},
                              [=, argmax = std::move(argmax)](const BackwardContext<Real>& ctx) {
                                const auto g = ctx.grad_output();
                                auto d = ctx.input_grad(0);
                                for (std::size_t r = 0; r < rows; ++r) {
                                  for (std::size_t i = 0; i < v2; ++i) {
                                    d[r * v1 + argmax[r * v2 + i]] += g[r * v2 + i];
                                  }
                                }
                              });
}

template <typename Real>
Tensor<Real> add_frame_embedding(const Tensor<Real>& x, const Tensor<Real>& table) {
  if (x.rank() != 4 || table.rank() != 2 || table.extent(1) != x.extent(2)) {
    throw DimensionError("add_frame_embedding: features " + shape_string(x.shape()) + " and table " +
                         shape_string(table.shape()) + " are incompatible");
  }
  const std::size_t n = x.extent(0), t = x.extent(1), c = x.extent(2), v = x.extent(3);
  if (t > table.extent(0)) {
    throw ContractError("add_frame_embedding: " + std::to_string(t) + " frames exceed embedding capacity " +
                        std::to_string(table.extent(0)));
  }
  const auto xd = x.data();
  const auto e = table.data();
  Buffer<Real> out(xd.begin(), xd.end());
  for (std::size_t in = 0; in < n; ++in)
    for (std::size_t it = 0; it < t; ++it)
      for (std::size_t ic = 0; ic < c; ++ic) {
        Real* row = out.data() + ((in * t + it) * c + ic) * v;
        const Real add = e[it * c + ic];
        for (std::size_t iv = 0; iv < v; ++iv) row[iv] += add;
      }
  return make_op_result<Real>("add_frame_embedding", x.shape(), std::move(out), {x, table},
                              [=](const BackwardContext<Real>& ctx) {
                                const auto g = ctx.grad_output();
                                if (ctx.needs_grad(0)) {
                                  auto d = ctx.input_grad(0);
                                  for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
                                }
                                if (ctx.needs_grad(1)) {
                                  auto d = ctx.input_grad(1);
                                  for (std::size_t in = 0; in < n; ++in)
                                    for (std::size_t it = 0; it < t; ++it)
                                      for (std::size_t ic = 0; ic < c; ++ic) {
                                        const Real* row = g.data() + ((in * t + it) * c + ic) * v;
                                        Real acc = 0;
                                        for (std::size_t iv = 0; iv < v; ++iv) acc += row[iv];
                                        d[it * c + ic] += acc;
                                      }
                                }
                              });
}

// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  return make_op_result<Real>("sum", {1}, {acc}, {x}, [](const BackwardContext<Real>& ctx) {
    const Real g = ctx.grad_output()[0];
    for (Real& d : ctx.input_grad(0)) d += g;
  });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& x) {
  Real acc = 0;
  for (Real v : x.data()) acc += v;
  const Real inv = Real(1) / static_cast<Real>(x.size());
  return make_op_result<Real>("mean", {1}, {acc * inv}, {x}, [inv](const BackwardContext<Real>& ctx) {
    const Real g = ctx.grad_output()[0] * inv;
    for (Real& d : ctx.input_grad(0)) d += g;
  });
}

template <typename Real>
Tensor<Real> mean_axis(const Tensor<Real>& x, std::ptrdiff_t axis) {
  const std::size_t ax = normalize_axis(axis, x.rank(), x.shape());
  const AxisSplit s = split_at(x.shape(), ax);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(ax));
  if (out_shape.empty()) out_shape.push_back(1);
  const auto in = x.data();
  Buffer<Real> out(s.outer * s.inner, Real(0));
  const Real inv = Real(1) / static_cast<Real>(s.extent);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t j = 0; j < s.extent; ++j)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += in[(o * s.extent + j) * s.inner + i];
  for (Real& v : out) v *= inv;
  return make_op_result<Real>("mean_axis", std::move(out_shape), std::move(out), {x},
                              [s, inv](const BackwardContext<Real>& ctx) {
                                const auto g = ctx.grad_output();
                                auto d = ctx.input_grad(0);
                                for (std::size_t o = 0; o < s.outer; ++o)
                                  for (std::size_t j = 0; j < s.extent; ++j)
                                    for (std::size_t i = 0; i < s.inner; ++i)
                                      d[(o * s.extent + j) * s.inner + i] += g[o * s.inner + i] * inv;
                              });
}

template <typename Real>
Tensor<Real> reshape(const Tensor<Real>& x, Shape shape) {
  if (element_count(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) + " as " + shape_string(shape));
  }
  Buffer<Real> out(x.data().begin(), x.data().end());
  return make_op_result<Real>("reshape", std::move(shape), std::move(out), {x}, [](const BackwardContext<Real>& ctx) {
    const auto g = ctx.grad_output();
    auto d = ctx.input_grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

// ---------------------------------------------------------------------------

#define ANIFORMER_INSTANTIATE_OPS(Real)                                                                  \
  template Tensor<Real> pointwise_linear(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&); \
  template Tensor<Real> batch_matmul(const Tensor<Real>&, const Tensor<Real>&, bool, bool);              \
  template Tensor<Real> softmax(const Tensor<Real>&, std::ptrdiff_t);                                    \
  template Tensor<Real> instance_norm(const Tensor<Real>&, double);                                      \
  template Tensor<Real> add(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> sub(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> mul(const Tensor<Real>&, const Tensor<Real>&);                                   \
  template Tensor<Real> relu(const Tensor<Real>&);                                                       \
  template Tensor<Real> tanh(const Tensor<Real>&);                                                       \
  template Tensor<Real> abs(const Tensor<Real>&);                                                        \
  template Tensor<Real> square(const Tensor<Real>&);                                                     \
  template Tensor<Real> scale(const Tensor<Real>&, const Tensor<Real>&);                                 \
  template Tensor<Real> scale(const Tensor<Real>&, Real);                                                \
  template Tensor<Real> max_pool_vertices(const Tensor<Real>&, std::size_t);                             \
  template Tensor<Real> add_frame_embedding(const Tensor<Real>&, const Tensor<Real>&);                   \
  template Tensor<Real> sum(const Tensor<Real>&);                                                        \
  template Tensor<Real> mean(const Tensor<Real>&);                                                       \
  template Tensor<Real> mean_axis(const Tensor<Real>&, std::ptrdiff_t);                                  \
  template Tensor<Real> reshape(const Tensor<Real>&, Shape);

ANIFORMER_INSTANTIATE_OPS(float)
ANIFORMER_INSTANTIATE_OPS(double)

#undef ANIFORMER_INSTANTIATE_OPS

}  // namespace aniformer
