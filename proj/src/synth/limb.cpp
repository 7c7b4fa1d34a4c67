#include <Eigen/Geometry>
#include <cmath>
#include <numbers>

#include "aniformer/errors.hpp"
#include "aniformer/random.hpp"
#include "aniformer/synth.hpp"

namespace aniformer {

namespace {

using Eigen::Matrix3d;
using Eigen::Vector3d;

struct RestGeometry {
  std::vector<double> joints;  // B + 1 joint x-coordinates
  double root = 0;
  double scale = 1;
  std::vector<Vector3d> points;
  // Bone per vertex; a second bone with 0.5/0.5 weights on blended rings.
  std::vector<std::size_t> bone;
  std::vector<std::ptrdiff_t> blend_bone;
};

std::size_t half(std::size_t bones) { return bones / 2; }

RestGeometry rest_geometry(const ShapeParams& shape, double extent) {
  const std::size_t b_count = shape.bone_count();
  const std::size_t s_count = shape.rings_per_bone;
  const std::size_t r_count = shape.ring_resolution;
  RestGeometry g;
  g.joints.assign(b_count + 1, 0.0);
  for (std::size_t b = 0; b < b_count; ++b) g.joints[b + 1] = g.joints[b] + shape.lengths[b];
  g.root = g.joints[half(b_count)];

  const std::size_t v = shape.vertex_count();
  g.points.reserve(v);
  g.bone.reserve(v);
  g.blend_bone.reserve(v);
  double max_radius = 0;
  for (std::size_t b = 0; b < b_count; ++b) {
    for (std::size_t k = 0; k < s_count; ++k) {
      const double u = static_cast<double>(k) / static_cast<double>(s_count);
      const double x = g.joints[b] + u * shape.lengths[b];
      const double rho = shape.radii[b] * (1.0 + shape.bulges[b] * std::sin(std::numbers::pi * u));
      max_radius = std::max(max_radius, rho);
      for (std::size_t a = 0; a < r_count; ++a) {
        const double phi = 2.0 * std::numbers::pi * static_cast<double>(a) / static_cast<double>(r_count);
        g.points.emplace_back(x, rho * std::cos(phi), rho * std::sin(phi));
        g.bone.push_back(b);
        g.blend_bone.push_back(k == 0 && b > 0 ? static_cast<std::ptrdiff_t>(b) - 1 : -1);
      }
    }
  }
  const double left_cap = g.joints[0] - shape.lengths[0] / static_cast<double>(s_count);
  const double right_cap = g.joints[b_count];
  g.points.emplace_back(left_cap, 0.0, 0.0);
  g.bone.push_back(0);
  g.blend_bone.push_back(-1);
  g.points.emplace_back(right_cap, 0.0, 0.0);
  g.bone.push_back(b_count - 1);
  g.blend_bone.push_back(-1);

  const double reach = std::max(g.root - left_cap, right_cap - g.root);
  g.scale = extent / (reach + max_radius);
  return g;
}

struct BoneTransform {
  Matrix3d rotation = Matrix3d::Identity();
  Vector3d pivot_rest = Vector3d::Zero();
  Vector3d pivot_posed = Vector3d::Zero();

  Vector3d apply(const Vector3d& p) const { return rotation * (p - pivot_rest) + pivot_posed; }
};

// Forward kinematics outward from the root along both sub-chains.
std::vector<BoneTransform> pose_bones(const RestGeometry& g, const PoseFrame& pose) {
  const std::size_t b_count = g.joints.size() - 1;
  const std::size_t h = half(b_count);
  std::vector<BoneTransform> t(b_count);
  auto local = [&](std::size_t b) {
    return Matrix3d(Eigen::AngleAxisd(pose.angles[2 * b], Vector3d::UnitZ()) *
                    Eigen::AngleAxisd(pose.angles[2 * b + 1], Vector3d::UnitY()));
  };
  auto attach = [&](std::size_t b, std::ptrdiff_t parent, double pivot_x) {
    t[b].pivot_rest = Vector3d(pivot_x, 0, 0);
    if (parent < 0) {
      t[b].rotation = local(b);
      t[b].pivot_posed = t[b].pivot_rest;
    } else {
      const BoneTransform& p = t[static_cast<std::size_t>(parent)];
      t[b].rotation = p.rotation * local(b);
      t[b].pivot_posed = p.apply(t[b].pivot_rest);
    }
  };
  for (std::size_t b = h; b < b_count; ++b) {
    attach(b, b == h ? -1 : static_cast<std::ptrdiff_t>(b) - 1, g.joints[b]);
  }
  for (std::size_t b = h; b-- > 0;) {
    attach(b, b + 1 == h ? -1 : static_cast<std::ptrdiff_t>(b) + 1, g.joints[b + 1]);
  }
  return t;
}

std::vector<Vec3> posed_points(const RestGeometry& g, const PoseFrame& pose) {
  const auto t = pose_bones(g, pose);
  const Vector3d root(g.root, 0, 0);
  std::vector<Vec3> out(g.points.size());
  for (std::size_t i = 0; i < g.points.size(); ++i) {
    Vector3d p = t[g.bone[i]].apply(g.points[i]);
    if (g.blend_bone[i] >= 0) p = 0.5 * p + 0.5 * t[static_cast<std::size_t>(g.blend_bone[i])].apply(g.points[i]);
    const Vector3d n = g.scale * (p - root);
    out[i] = {n.x(), n.y(), n.z()};
  }
  return out;
}

void check_pose(const ShapeParams& shape, const PoseFrame& pose) {
  if (pose.angles.size() != 2 * shape.bone_count()) {
    throw ValidationError("pose has " + std::to_string(pose.angles.size()) + " angles, expected " +
                          std::to_string(2 * shape.bone_count()));
  }
  for (double a : pose.angles) {
    if (!(std::abs(a) <= std::numbers::pi / 2)) throw ValidationError("pose angle outside [-pi/2, pi/2]");
  }
}

}  // namespace

void SynthConfig::validate() const {
  if (bone_count < 2) throw ValidationError("bone_count must be at least 2");
  if (rings_per_bone < 1) throw ValidationError("rings_per_bone must be at least 1");
  if (ring_resolution < 6) throw ValidationError("ring_resolution must be at least 6");
  if (!(extent > 0)) throw ValidationError("extent must be positive");
  if (!(length_min > 0 && length_max >= length_min)) throw ValidationError("invalid bone length range");
  if (!(radius_min > 0 && radius_max >= radius_min)) throw ValidationError("invalid bone radius range");
  if (!(bulge_max >= 0)) throw ValidationError("bulge_max must be non-negative");
  if (!(motion_amplitude >= 0 && motion_amplitude <= std::numbers::pi / 2)) {
    throw ValidationError("motion_amplitude must lie in [0, pi/2]");
  }
  if (!(frequency_min > 0 && frequency_max >= frequency_min)) throw ValidationError("invalid frequency range");
  if (max_harmonics < 1) throw ValidationError("max_harmonics must be at least 1");
  if (!(target_pose_range >= 0 && target_pose_range <= std::numbers::pi / 2)) {
    throw ValidationError("target_pose_range must lie in [0, pi/2]");
  }
}

void ShapeParams::validate() const {
  if (lengths.size() < 2) throw ValidationError("shape needs at least two bones");
  if (radii.size() != lengths.size() || bulges.size() != lengths.size()) {
    throw ValidationError("per-bone shape arrays differ in length");
  }
  if (ring_resolution < 6 || rings_per_bone < 1) throw ValidationError("invalid ring layout");
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (!(lengths[b] > 0 && radii[b] > 0 && bulges[b] >= 0)) {
      throw ValidationError("bone " + std::to_string(b) + " has a non-positive length or radius");
    }
  }
}

ShapeParams generate_shape(std::uint64_t seed, const SynthConfig& config) {
  config.validate();
  Rng rng(mix_seed(seed, 0x5a));
  ShapeParams s;
  s.seed = seed;
  s.rings_per_bone = config.rings_per_bone;
  s.ring_resolution = config.ring_resolution;
  for (std::size_t b = 0; b < config.bone_count; ++b) {
    s.lengths.push_back(rng.uniform(config.length_min, config.length_max));
    s.radii.push_back(rng.uniform(config.radius_min, config.radius_max));
    s.bulges.push_back(rng.uniform(0.0, config.bulge_max));
  }
  return s;
}

PoseFrame rest_pose(std::size_t bone_count) { return PoseFrame{std::vector<double>(2 * bone_count, 0.0)}; }

PoseFrame random_static_pose(std::uint64_t seed, const SynthConfig& config) {
  config.validate();
  Rng rng(mix_seed(seed, 0x71));
  PoseFrame p = rest_pose(config.bone_count);
  for (double& a : p.angles) a = rng.uniform(-config.target_pose_range, config.target_pose_range);
  return p;
}

std::vector<Face> limb_faces(std::size_t bone_count, std::size_t rings_per_bone, std::size_t ring_resolution) {
  const std::size_t rings = bone_count * rings_per_bone;
  const std::size_t r = ring_resolution;
  auto id = [r](std::size_t ring, std::size_t a) { return static_cast<std::uint32_t>(ring * r + a % r); };
  std::vector<Face> faces;
  faces.reserve(2 * (rings - 1) * r + 2 * r);
  for (std::size_t k = 0; k + 1 < rings; ++k) {
    for (std::size_t a = 0; a < r; ++a) {
      faces.push_back({id(k, a), id(k + 1, a), id(k + 1, a + 1)});
      faces.push_back({id(k, a), id(k + 1, a + 1), id(k, a + 1)});
    }
  }
  const auto left = static_cast<std::uint32_t>(rings * r);
  const auto right = left + 1;
  for (std::size_t a = 0; a < r; ++a) {
    faces.push_back({left, id(0, a + 1), id(0, a)});
    faces.push_back({right, id(rings - 1, a), id(rings - 1, a + 1)});
  }
  return faces;
}

Mesh skin(const ShapeParams& shape, const PoseFrame& pose, double extent) {
  shape.validate();
  check_pose(shape, pose);
  const RestGeometry g = rest_geometry(shape, extent);
  return Mesh{posed_points(g, pose), limb_faces(shape.bone_count(), shape.rings_per_bone, shape.ring_resolution)};
}

MeshSequence skin_sequence(const ShapeParams& shape, const SkeletonPose& motion, double extent) {
  shape.validate();
  if (motion.empty()) throw ValidationError("motion has no frames");
  const RestGeometry g = rest_geometry(shape, extent);
  MeshSequence seq;
  seq.faces = limb_faces(shape.bone_count(), shape.rings_per_bone, shape.ring_resolution);
  seq.frames.reserve(motion.size());
  for (const PoseFrame& pose : motion) {
    check_pose(shape, pose);
    seq.frames.push_back(posed_points(g, pose));
  }
  return seq;
}

SkeletonPose generate_motion(std::uint64_t seed, std::size_t frame_count, const SynthConfig& config,
                             double amplitude_scale) {
  config.validate();
  if (frame_count < 3) throw ContractError("a motion needs at least 3 frames");
  if (!(amplitude_scale >= 0 && amplitude_scale <= 1)) throw ValidationError("amplitude_scale must lie in [0, 1]");
  struct Harmonic {
    double amplitude, frequency, phase;
  };
  Rng rng(mix_seed(seed, 0x3c));
  const std::size_t angle_count = 2 * config.bone_count;
  std::vector<std::vector<Harmonic>> harmonics(angle_count);
  for (auto& hs : harmonics) {
    const std::size_t count = 1 + rng.below(config.max_harmonics);
    const double budget = config.motion_amplitude * rng.uniform(0.3, 1.0);
    std::vector<double> w(count);
    double total = 0;
    for (double& x : w) {
      x = rng.uniform(0.2, 1.0);
      total += x;
    }
    for (std::size_t h = 0; h < count; ++h) {
      hs.push_back({amplitude_scale * budget * w[h] / total, rng.uniform(config.frequency_min, config.frequency_max),
                    rng.uniform(0.0, 2.0 * std::numbers::pi)});
    }
  }
  SkeletonPose motion(frame_count, rest_pose(config.bone_count));
  for (std::size_t t = 0; t < frame_count; ++t) {
    const double time = static_cast<double>(t) / static_cast<double>(frame_count);
    for (std::size_t j = 0; j < angle_count; ++j) {
      double a = 0;
      for (const Harmonic& h : harmonics[j]) a += h.amplitude * std::sin(2.0 * std::numbers::pi * h.frequency * time + h.phase);
      motion[t].angles[j] = a;
    }
  }
  return motion;
}

double mean_frame_displacement(const MeshSequence& seq) {
  if (seq.frame_count() < 2 || seq.vertex_count() == 0) return 0.0;
  double total = 0;
  for (std::size_t t = 0; t + 1 < seq.frame_count(); ++t) {
    for (std::size_t i = 0; i < seq.vertex_count(); ++i) {
      const Vec3& a = seq.frames[t][i];
      const Vec3& b = seq.frames[t + 1][i];
      total += std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
    }
  }
  return total / static_cast<double>((seq.frame_count() - 1) * seq.vertex_count());
}

}  // namespace aniformer
