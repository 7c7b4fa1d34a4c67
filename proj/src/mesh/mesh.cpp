#include "aniformer/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aniformer/errors.hpp"
#include "aniformer/random.hpp"

namespace aniformer {

namespace {

void validate_topology(std::span<const Face> faces, std::size_t vertex_count) {
  for (std::size_t f = 0; f < faces.size(); ++f) {
    const Face& face = faces[f];
    for (std::uint32_t i : face) {
      if (i >= vertex_count) {
        throw ValidationError("face " + std::to_string(f) + " references vertex " + std::to_string(i) +
                              " of " + std::to_string(vertex_count));
      }
    }
    if (face[0] == face[1] || face[1] == face[2] || face[0] == face[2]) {
      throw ValidationError("face " + std::to_string(f) + " is degenerate");
    }
  }
}

void validate_points(std::span<const Vec3> points) {
  for (std::size_t v = 0; v < points.size(); ++v) {
    for (double c : points[v]) {
      if (!std::isfinite(c)) throw ValidationError("vertex " + std::to_string(v) + " has a non-finite coordinate");
    }
  }
}

void validate_permutation(std::span<const std::uint32_t> perm, std::size_t n) {
  if (perm.size() != n) {
    throw ValidationError("permutation of length " + std::to_string(perm.size()) + " for " + std::to_string(n) +
                          " vertices");
  }
  std::vector<bool> seen(n, false);
  for (std::uint32_t p : perm) {
    if (p >= n || seen[p]) throw ValidationError("vertex permutation is not a bijection");
    seen[p] = true;
  }
}

}  // namespace

void Mesh::validate() const {
  validate_points(vertices);
  validate_topology(faces, vertices.size());
}

Mesh MeshSequence::frame(std::size_t t) const {
  if (t >= frames.size()) {
    throw ContractError("frame " + std::to_string(t) + " of a " + std::to_string(frames.size()) + "-frame sequence");
  }
  return Mesh{frames[t], faces};
}

void MeshSequence::validate() const {
  if (frames.empty()) throw ValidationError("mesh sequence has no frames");
  const std::size_t v = frames.front().size();
  for (std::size_t t = 0; t < frames.size(); ++t) {
    if (frames[t].size() != v) {
      throw ValidationError("frame " + std::to_string(t) + " has " + std::to_string(frames[t].size()) +
                            " vertices, expected " + std::to_string(v));
    }
    validate_points(frames[t]);
  }
  validate_topology(faces, v);
}

MeshSequence MeshSequence::from_meshes(std::span<const Mesh> meshes) {
  if (meshes.empty()) throw ValidationError("mesh sequence needs at least one frame");
  MeshSequence seq;
  seq.faces = meshes.front().faces;
  for (const Mesh& m : meshes) {
    if (m.faces != seq.faces) throw ValidationError("frames of a sequence must share one face list");
    seq.frames.push_back(m.vertices);
  }
  seq.validate();
  return seq;
}

MeshSequence MeshSequence::repeat(const Mesh& mesh, std::size_t frames) {
  MeshSequence seq;
  seq.faces = mesh.faces;
  seq.frames.assign(frames, mesh.vertices);
  return seq;
}

std::vector<std::pair<std::uint32_t, std::uint32_t>> Neighborhood::edges() const {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  for (std::uint32_t p = 0; p < adjacency.size(); ++p) {
    for (std::uint32_t u : adjacency[p]) {
      if (p < u) out.emplace_back(p, u);
    }
  }
  return out;
}

Neighborhood build_neighborhood(std::span<const Face> faces, std::size_t vertex_count) {
  validate_topology(faces, vertex_count);
  Neighborhood n;
  n.adjacency.resize(vertex_count);
  for (const Face& f : faces) {
    for (int k = 0; k < 3; ++k) {
      const std::uint32_t a = f[k];
      const std::uint32_t b = f[(k + 1) % 3];
      n.adjacency[a].push_back(b);
      n.adjacency[b].push_back(a);
    }
  }
  for (auto& list : n.adjacency) {
    std::sort(list.begin(), list.end());
    list.erase(std::unique(list.begin(), list.end()), list.end());
  }
  return n;
}

Neighborhood build_neighborhood(const Mesh& mesh) { return build_neighborhood(mesh.faces, mesh.vertex_count()); }

std::vector<Vec3> permute_points(std::span<const Vec3> points, std::span<const std::uint32_t> perm) {
  validate_permutation(perm, points.size());
  std::vector<Vec3> out(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) out[perm[i]] = points[i];
  return out;
}

namespace {

std::vector<Face> remap_faces(std::span<const Face> faces, std::span<const std::uint32_t> perm) {
  std::vector<Face> out(faces.begin(), faces.end());
  for (Face& f : out) {
    for (auto& i : f) i = perm[i];
  }
  return out;
}

}  // namespace

Mesh permute_vertices(const Mesh& mesh, std::span<const std::uint32_t> perm) {
  Mesh out;
  out.vertices = permute_points(mesh.vertices, perm);
  out.faces = remap_faces(mesh.faces, perm);
  return out;
}

MeshSequence permute_vertices(const MeshSequence& seq, std::span<const std::uint32_t> perm) {
  MeshSequence out;
  out.frames.reserve(seq.frames.size());
  for (const auto& f : seq.frames) out.frames.push_back(permute_points(f, perm));
  validate_permutation(perm, seq.vertex_count());
  out.faces = remap_faces(seq.faces, perm);
  return out;
}

std::vector<std::uint32_t> inverse_permutation(std::span<const std::uint32_t> perm) {
  validate_permutation(perm, perm.size());
  std::vector<std::uint32_t> inv(perm.size());
  for (std::uint32_t i = 0; i < perm.size(); ++i) inv[perm[i]] = i;
  return inv;
}

double Bounds::diagonal() const {
  double s = 0;
  for (int k = 0; k < 3; ++k) s += (hi[k] - lo[k]) * (hi[k] - lo[k]);
  return std::sqrt(s);
}

Bounds bounding_box(std::span<const Vec3> points) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  Bounds b{{inf, inf, inf}, {-inf, -inf, -inf}};
  for (const Vec3& p : points) {
    for (int k = 0; k < 3; ++k) {
      b.lo[k] = std::min(b.lo[k], p[k]);
      b.hi[k] = std::max(b.hi[k], p[k]);
    }
  }
  return b;
}

Bounds bounding_box(const MeshSequence& seq) {
  Bounds b = bounding_box(seq.frames.at(0));
  for (const auto& f : seq.frames) {
    const Bounds fb = bounding_box(f);
    for (int k = 0; k < 3; ++k) {
      b.lo[k] = std::min(b.lo[k], fb.lo[k]);
      b.hi[k] = std::max(b.hi[k], fb.hi[k]);
    }
  }
  return b;
}

MeshSequence add_uniform_noise(const MeshSequence& seq, double amplitude, std::uint64_t seed) {
  if (!(amplitude >= 0.0)) throw ValidationError("noise amplitude must be non-negative");
  MeshSequence out = seq;
  if (amplitude == 0.0) return out;
  const double a = amplitude * bounding_box(seq).diagonal();
  Rng rng(seed);
  for (auto& frame : out.frames) {
    for (Vec3& p : frame) {
      for (double& c : p) c += rng.uniform(-a, a);
    }
  }
  return out;
}

}  // namespace aniformer
