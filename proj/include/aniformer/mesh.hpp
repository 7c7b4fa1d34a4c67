#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace aniformer {

using Vec3 = std::array<double, 3>;
using Face = std::array<std::uint32_t, 3>;

// Triangle mesh. Invariants (checked by validate()): face indices in [0, V),
// three distinct indices per face, finite coordinates.
struct Mesh {
  std::vector<Vec3> vertices;
  std::vector<Face> faces;

  std::size_t vertex_count() const { return vertices.size(); }
  void validate() const;
  friend bool operator==(const Mesh&, const Mesh&) = default;
};

// T >= 1 frames sharing one face list.
struct MeshSequence {
  std::vector<std::vector<Vec3>> frames;
  std::vector<Face> faces;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t vertex_count() const { return frames.empty() ? 0 : frames.front().size(); }
  Mesh frame(std::size_t t) const;
  void validate() const;

  static MeshSequence from_meshes(std::span<const Mesh> meshes);
  static MeshSequence repeat(const Mesh& mesh, std::size_t frames);
  friend bool operator==(const MeshSequence&, const MeshSequence&) = default;
};

// Undirected face-graph adjacency, one sorted list per vertex.
struct Neighborhood {
  std::vector<std::vector<std::uint32_t>> adjacency;

  std::size_t vertex_count() const { return adjacency.size(); }
  // Each undirected edge once, as (lo, hi) with lo < hi, sorted.
  std::vector<std::pair<std::uint32_t, std::uint32_t>> edges() const;
};

Neighborhood build_neighborhood(std::span<const Face> faces, std::size_t vertex_count);
Neighborhood build_neighborhood(const Mesh& mesh);

// vertices[perm[i]] = old vertices[i]; faces are remapped so the geometry is
// unchanged. perm must be a bijection on [0, V).
Mesh permute_vertices(const Mesh& mesh, std::span<const std::uint32_t> perm);
MeshSequence permute_vertices(const MeshSequence& seq, std::span<const std::uint32_t> perm);
std::vector<Vec3> permute_points(std::span<const Vec3> points, std::span<const std::uint32_t> perm);
std::vector<std::uint32_t> inverse_permutation(std::span<const std::uint32_t> perm);

struct Bounds {
  Vec3 lo;
  Vec3 hi;
  double diagonal() const;
};

Bounds bounding_box(const MeshSequence& seq);
Bounds bounding_box(std::span<const Vec3> points);

// Perturbs every coordinate by an independent draw from [-a, a] with
// a = amplitude * (diagonal of the sequence-wide bounding box).
MeshSequence add_uniform_noise(const MeshSequence& seq, double amplitude, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Wavefront OBJ (v and f records; polygons fan-triangulated, slash indices
// accepted, everything else ignored).

Mesh parse_obj(std::istream& in);
Mesh load_obj(const std::filesystem::path& path);
void write_obj(const Mesh& mesh, std::ostream& out);
void save_obj(const Mesh& mesh, const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Mesh-sequence directories: frame_0000.obj ... plus manifest.json.

enum class SequenceRole { kDriving, kTarget, kGenerated, kGroundTruth };

std::string to_string(SequenceRole role);
SequenceRole parse_sequence_role(const std::string& text);

struct SequenceManifest {
  std::size_t frame_count = 0;
  std::size_t vertex_count = 0;
  std::optional<double> fps;
  SequenceRole role = SequenceRole::kDriving;
};

void save_sequence(const MeshSequence& seq, const std::filesystem::path& dir, SequenceRole role,
                   std::optional<double> fps = std::nullopt);
MeshSequence load_sequence(const std::filesystem::path& dir, SequenceManifest* manifest = nullptr);
std::string frame_file_name(std::size_t index);

}  // namespace aniformer
