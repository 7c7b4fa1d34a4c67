#pragma once

// Training objectives over sequences laid out as [N, T, 3, V] tensors, and the
// evaluation metric over meshes. Batched losses average over N.

#include <string>
#include <vector>

#include "aniformer/mesh.hpp"
#include "aniformer/tensor.hpp"

namespace aniformer {

enum class Penalty { kAbsolute, kSquared };

// Which sequence supplies the reference frame differences of the motion term.
enum class MotionReference { kDriving, kGroundTruth };

std::string to_string(Penalty p);
Penalty parse_penalty(const std::string& text);
std::string to_string(MotionReference r);
MotionReference parse_motion_reference(const std::string& text);

inline constexpr double kMotionEps = 1e-8;

struct LossWeights {
  double reconstruction = 1.0;
  double motion = 0.0005;
  double appearance = 0.0005;
  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

struct LossOptions {
  Penalty penalty = Penalty::kAbsolute;
  MotionReference motion_reference = MotionReference::kDriving;
  double motion_eps = kMotionEps;
  friend bool operator==(const LossOptions&, const LossOptions&) = default;
};

// Mean over frames and vertices of the squared vertex distance.
template <typename Real>
Tensor<Real> reconstruction_loss(const Tensor<Real>& generated, const Tensor<Real>& ground_truth);

// Ratios r_t = |M_t - M_{t-1}|^2 / max(|G_t - G_{t-1}|^2, eps) over whole
// frames; loss = mean over t >= 2 of penalty(r_{t-1} - r_t). G is constant.
template <typename Real>
Tensor<Real> motion_loss(const Tensor<Real>& generated, const Tensor<Real>& reference,
                         Penalty penalty = Penalty::kAbsolute, double eps = kMotionEps);

// (1 / (T V)) sum_t sum_p sum_{u in N(p)} penalty(|p - u|^2_M - |p - u|^2_N).
// target is [N, 1, 3, V] and constant.
template <typename Real>
Tensor<Real> appearance_loss(const Tensor<Real>& generated, const Tensor<Real>& target, const Neighborhood& nbr,
                             Penalty penalty = Penalty::kAbsolute);

template <typename Real>
struct ObjectiveTerms {
  Tensor<Real> total;
  double reconstruction = 0;
  double motion = 0;
  double appearance = 0;
};

// Components with zero weight are still evaluated (for logging) but kept out
// of the graph.
template <typename Real>
ObjectiveTerms<Real> full_objective(const Tensor<Real>& generated, const Tensor<Real>& ground_truth,
                                    const Tensor<Real>& driving, const Tensor<Real>& target, const Neighborhood& nbr,
                                    const LossWeights& weights = {}, const LossOptions& options = {});

// Mean squared vertex distance over frames and vertices.
double pmd(const MeshSequence& generated, const MeshSequence& ground_truth);
std::vector<double> pmd_per_frame(const MeshSequence& generated, const MeshSequence& ground_truth);

}  // namespace aniformer
