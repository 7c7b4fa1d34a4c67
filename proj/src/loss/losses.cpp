#include <algorithm>
#include <cmath>

#include "aniformer/errors.hpp"
#include "aniformer/loss.hpp"
#include "aniformer/ops.hpp"

namespace aniformer {

namespace {

void check_sequence(const Shape& s, const char* what) {
  if (s.size() != 4 || s[2] != 3 || s[0] == 0 || s[1] == 0 || s[3] == 0) {
    throw ContractError(std::string(what) + " must be [N, T, 3, V], got " + shape_string(s));
  }
}

void check_same(const Shape& a, const Shape& b, const char* what) {
  if (a != b) throw ContractError(std::string(what) + ": shapes " + shape_string(a) + " and " + shape_string(b) + " differ");
}

double penalty_value(Penalty p, double x) { return p == Penalty::kAbsolute ? std::abs(x) : x * x; }

double penalty_slope(Penalty p, double x) {
  if (p == Penalty::kSquared) return 2.0 * x;
  return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0);
}

double frame_diff_sq(const double* a, const double* b, std::size_t n) {
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

std::string to_string(Penalty p) { return p == Penalty::kAbsolute ? "abs" : "squared"; }

Penalty parse_penalty(const std::string& text) {
  if (text == "abs") return Penalty::kAbsolute;
  if (text == "squared") return Penalty::kSquared;
  throw ValidationError("penalty must be 'abs' or 'squared', got '" + text + "'");
}

std::string to_string(MotionReference r) { return r == MotionReference::kDriving ? "driving" : "ground_truth"; }

MotionReference parse_motion_reference(const std::string& text) {
  if (text == "driving") return MotionReference::kDriving;
  if (text == "ground_truth") return MotionReference::kGroundTruth;
  throw ValidationError("motion reference must be 'driving' or 'ground_truth', got '" + text + "'");
}

void LossWeights::validate() const {
  for (double w : {reconstruction, motion, appearance}) {
    if (!(w >= 0 && std::isfinite(w))) throw ValidationError("loss weights must be finite and non-negative");
  }
}

template <typename Real>
Tensor<Real> reconstruction_loss(const Tensor<Real>& generated, const Tensor<Real>& ground_truth) {
  check_sequence(generated.shape(), "reconstruction_loss input");
  check_same(generated.shape(), ground_truth.shape(), "reconstruction_loss");
  const Shape& s = generated.shape();
  const double count = static_cast<double>(s[0] * s[1] * s[3]);
  return scale(sum(square(generated - ground_truth)), static_cast<Real>(1.0 / count));
}

template <typename Real>
Tensor<Real> motion_loss(const Tensor<Real>& generated, const Tensor<Real>& reference, Penalty penalty, double eps) {
  check_sequence(generated.shape(), "motion_loss input");
  check_same(generated.shape(), reference.shape(), "motion_loss");
  const Shape& s = generated.shape();
  const std::size_t n_count = s[0], t_count = s[1], frame = 3 * s[3];
  if (t_count < 3) throw ContractError("motion_loss needs at least 3 frames, got " + std::to_string(t_count));

  const auto md = generated.data();
  const auto gd = reference.data();
  std::vector<double> m(md.begin(), md.end());
  std::vector<double> g(gd.begin(), gd.end());
  // Per sample: denominators g_t and ratios r_t for t = 1..T-1.
  std::vector<double> denom(n_count * t_count, 0.0), ratio(n_count * t_count, 0.0);
  double total = 0;
  for (std::size_t n = 0; n < n_count; ++n) {
    const double* mn = m.data() + n * t_count * frame;
    const double* gn = g.data() + n * t_count * frame;
    for (std::size_t t = 1; t < t_count; ++t) {
      // Floored, not shifted: r_t is exactly 1 wherever M and G share a step.
      denom[n * t_count + t] = std::max(frame_diff_sq(gn + t * frame, gn + (t - 1) * frame, frame), eps);
      ratio[n * t_count + t] = frame_diff_sq(mn + t * frame, mn + (t - 1) * frame, frame) / denom[n * t_count + t];
    }
    for (std::size_t t = 2; t < t_count; ++t) {
      total += penalty_value(penalty, ratio[n * t_count + t - 1] - ratio[n * t_count + t]);
    }
  }
  const double norm = 1.0 / static_cast<double>((t_count - 2) * n_count);
  Buffer<Real> out{static_cast<Real>(total * norm)};
  return make_op_result<Real>(
      "motion_loss", {1}, std::move(out), {generated},
      [m = std::move(m), denom = std::move(denom), ratio = std::move(ratio), n_count, t_count, frame, norm,
       penalty](const BackwardContext<Real>& ctx) {
        if (!ctx.needs_grad(0)) return;
        const double gout = static_cast<double>(ctx.grad_output()[0]) * norm;
        auto dm = ctx.input_grad(0);
        std::vector<double> dratio(t_count);
        for (std::size_t n = 0; n < n_count; ++n) {
          std::fill(dratio.begin(), dratio.end(), 0.0);
          for (std::size_t t = 2; t < t_count; ++t) {
            const double slope = penalty_slope(penalty, ratio[n * t_count + t - 1] - ratio[n * t_count + t]) * gout;
            dratio[t - 1] += slope;
            dratio[t] -= slope;
          }
          const std::size_t base = n * t_count * frame;
          for (std::size_t t = 1; t < t_count; ++t) {
            const double c = 2.0 * dratio[t] / denom[n * t_count + t];
            if (c == 0) continue;
            for (std::size_t i = 0; i < frame; ++i) {
              const double d = c * (m[base + t * frame + i] - m[base + (t - 1) * frame + i]);
              dm[base + t * frame + i] += static_cast<Real>(d);
              dm[base + (t - 1) * frame + i] -= static_cast<Real>(d);
            }
          }
        }
      });
}

template <typename Real>
Tensor<Real> appearance_loss(const Tensor<Real>& generated, const Tensor<Real>& target, const Neighborhood& nbr,
                             Penalty penalty) {
  check_sequence(generated.shape(), "appearance_loss input");
  const Shape& s = generated.shape();
  const std::size_t n_count = s[0], t_count = s[1], v = s[3];
  if (target.shape() != Shape{n_count, 1, 3, v}) {
    throw ContractError("appearance_loss target must be " + shape_string({n_count, 1, 3, v}) + ", got " +
                        shape_string(target.shape()));
  }
  if (nbr.vertex_count() != v) {
    throw ContractError("neighborhood covers " + std::to_string(nbr.vertex_count()) + " vertices, sequence has " +
                        std::to_string(v));
  }
  const auto edges = nbr.edges();
  const auto md = generated.data();
  const auto nd = target.data();
  auto edge_sq = [v](auto data, std::size_t base, std::size_t a, std::size_t b) {
    double sum = 0;
    for (std::size_t k = 0; k < 3; ++k) {
      const double d = static_cast<double>(data[base + k * v + a]) - static_cast<double>(data[base + k * v + b]);
      sum += d * d;
    }
    return sum;
  };
  // Residual per (sample, frame, edge).
  std::vector<double> residual(n_count * t_count * edges.size());
  double total = 0;
  std::size_t r = 0;
  for (std::size_t n = 0; n < n_count; ++n) {
    for (std::size_t t = 0; t < t_count; ++t) {
      for (const auto& [a, b] : edges) {
        residual[r] = edge_sq(md, (n * t_count + t) * 3 * v, a, b) - edge_sq(nd, n * 3 * v, a, b);
        total += 2.0 * penalty_value(penalty, residual[r]);
        ++r;
      }
    }
  }
  const double norm = 1.0 / static_cast<double>(t_count * v * n_count);
  Buffer<Real> out{static_cast<Real>(total * norm)};
  return make_op_result<Real>(
      "appearance_loss", {1}, std::move(out), {generated},
      [edges, residual = std::move(residual), n_count, t_count, v, norm, penalty](const BackwardContext<Real>& ctx) {
        if (!ctx.needs_grad(0)) return;
        const double gout = static_cast<double>(ctx.grad_output()[0]) * norm;
        const auto m = ctx.input(0);
        auto dm = ctx.input_grad(0);
        std::size_t r = 0;
        for (std::size_t n = 0; n < n_count; ++n) {
          for (std::size_t t = 0; t < t_count; ++t) {
            const std::size_t base = (n * t_count + t) * 3 * v;
            for (const auto& [a, b] : edges) {
              const double c = 4.0 * penalty_slope(penalty, residual[r++]) * gout;
              if (c == 0) continue;
              for (std::size_t k = 0; k < 3; ++k) {
                const double d =
                    c * (static_cast<double>(m[base + k * v + a]) - static_cast<double>(m[base + k * v + b]));
                dm[base + k * v + a] += static_cast<Real>(d);
                dm[base + k * v + b] -= static_cast<Real>(d);
              }
            }
          }
        }
      });
}

template <typename Real>
ObjectiveTerms<Real> full_objective(const Tensor<Real>& generated, const Tensor<Real>& ground_truth,
                                    const Tensor<Real>& driving, const Tensor<Real>& target, const Neighborhood& nbr,
                                    const LossWeights& weights, const LossOptions& options) {
  weights.validate();
  const Tensor<Real>& reference = options.motion_reference == MotionReference::kDriving ? driving : ground_truth;
  ObjectiveTerms<Real> out;
  Tensor<Real> total;
  auto term = [&](double weight, auto&& evaluate) {
    Tensor<Real> value;
    if (weight > 0) {
      value = evaluate();
      const Tensor<Real> weighted = scale(value, static_cast<Real>(weight));
      total = total.defined() ? total + weighted : weighted;
    } else {
      NoGradGuard no_grad;
      value = evaluate();
    }
    return static_cast<double>(value.item());
  };
  out.reconstruction = term(weights.reconstruction, [&] { return reconstruction_loss(generated, ground_truth); });
  out.motion = term(weights.motion, [&] { return motion_loss(generated, reference, options.penalty, options.motion_eps); });
  out.appearance = term(weights.appearance, [&] { return appearance_loss(generated, target, nbr, options.penalty); });
  out.total = total.defined() ? total : Tensor<Real>::scalar(Real(0));
  return out;
}

double pmd(const MeshSequence& generated, const MeshSequence& ground_truth) {
  const auto frames = pmd_per_frame(generated, ground_truth);
  double sum = 0;
  for (double f : frames) sum += f;
  return sum / static_cast<double>(frames.size());
}

std::vector<double> pmd_per_frame(const MeshSequence& generated, const MeshSequence& ground_truth) {
  if (generated.frame_count() != ground_truth.frame_count() || generated.vertex_count() != ground_truth.vertex_count()) {
    throw ContractError("pmd: sequences differ in frame or vertex count");
  }
  if (generated.frame_count() == 0 || generated.vertex_count() == 0) throw ContractError("pmd: empty sequence");
  std::vector<double> out;
  const std::size_t v = generated.vertex_count();
  for (std::size_t t = 0; t < generated.frame_count(); ++t) {
    double s = 0;
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t k = 0; k < 3; ++k) {
        const double d = generated.frames[t][i][k] - ground_truth.frames[t][i][k];
        s += d * d;
      }
    }
    out.push_back(s / static_cast<double>(v));
  }
  return out;
}

#define ANIFORMER_INSTANTIATE(Real)                                                                              \
  template Tensor<Real> reconstruction_loss<Real>(const Tensor<Real>&, const Tensor<Real>&);                    \
  template Tensor<Real> motion_loss<Real>(const Tensor<Real>&, const Tensor<Real>&, Penalty, double);           \
  template Tensor<Real> appearance_loss<Real>(const Tensor<Real>&, const Tensor<Real>&, const Neighborhood&,    \
                                              Penalty);                                                         \
  template ObjectiveTerms<Real> full_objective<Real>(const Tensor<Real>&, const Tensor<Real>&, const Tensor<Real>&, \
                                                     const Tensor<Real>&, const Neighborhood&, const LossWeights&, \
                                                     const LossOptions&);

ANIFORMER_INSTANTIATE(float)
ANIFORMER_INSTANTIATE(double)

}  // namespace aniformer
