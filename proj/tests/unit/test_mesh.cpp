#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "aniformer/errors.hpp"
#include "aniformer/mesh.hpp"
#include "aniformer/random.hpp"

using namespace aniformer;

namespace {

// Closed tube: `rings` rings of `around` vertices, quads split into triangles.
Mesh tube(std::size_t rings, std::size_t around, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  Mesh m;
  for (std::size_t r = 0; r < rings; ++r) {
    for (std::size_t a = 0; a < around; ++a) {
      const double phi = 2.0 * M_PI * static_cast<double>(a) / static_cast<double>(around);
      m.vertices.push_back({0.1 * static_cast<double>(r) + jitter(gen), std::cos(phi) + jitter(gen),
                            std::sin(phi) + jitter(gen)});
    }
  }
  auto id = [&](std::size_t r, std::size_t a) { return static_cast<std::uint32_t>(r * around + a % around); };
  for (std::size_t r = 0; r + 1 < rings; ++r) {
    for (std::size_t a = 0; a < around; ++a) {
      m.faces.push_back({id(r, a), id(r + 1, a), id(r + 1, a + 1)});
      m.faces.push_back({id(r, a), id(r + 1, a + 1), id(r, a + 1)});
    }
  }
  return m;
}

std::vector<std::uint32_t> random_perm(std::size_t n, std::uint64_t seed) {
  std::vector<std::uint32_t> p(n);
  std::iota(p.begin(), p.end(), 0u);
  std::mt19937_64 gen(seed);
  std::shuffle(p.begin(), p.end(), gen);
  return p;
}

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) + (a[2] - b[2]) * (a[2] - b[2]));
}

std::vector<double> sorted_edge_lengths(const Mesh& m) {
  std::vector<double> out;
  for (const auto& [a, b] : build_neighborhood(m).edges()) out.push_back(dist(m.vertices[a], m.vertices[b]));
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<double> sorted_face_areas(const Mesh& m) {
  std::vector<double> out;
  for (const Face& f : m.faces) {
    const Vec3 &a = m.vertices[f[0]], &b = m.vertices[f[1]], &c = m.vertices[f[2]];
    const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const Vec3 x{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    out.push_back(0.5 * std::sqrt(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]));
  }
  std::sort(out.begin(), out.end());
  return out;
}

Mesh parse(const std::string& text) {
  std::istringstream in(text);
  return parse_obj(in);
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("aniformer_test_mesh_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("mesh invariants are validated") {
  Mesh ok{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}};
  CHECK_NOTHROW(ok.validate());

  Mesh out_of_range = ok;
  out_of_range.faces[0][2] = 3;
  CHECK_THROWS_AS(out_of_range.validate(), ValidationError);

  Mesh degenerate = ok;
  degenerate.faces[0] = {0, 1, 1};
  CHECK_THROWS_AS(degenerate.validate(), ValidationError);

  Mesh nonfinite = ok;
  nonfinite.vertices[1][2] = std::nan("");
  CHECK_THROWS_AS(nonfinite.validate(), ValidationError);

  MeshSequence ragged{{ok.vertices, {{0, 0, 0}}}, ok.faces};
  CHECK_THROWS_AS(ragged.validate(), ValidationError);
  CHECK_THROWS_AS(MeshSequence{}.validate(), ValidationError);
}

TEST_CASE("sequence from meshes requires one shared face list") {
  const Mesh a = tube(3, 5, 1);
  Mesh b = tube(3, 5, 2);
  const std::vector<Mesh> same{a, b};
  const MeshSequence seq = MeshSequence::from_meshes(same);
  CHECK(seq.frame_count() == 2);
  CHECK(seq.frame(1) == b);
  CHECK_THROWS_AS(seq.frame(2), ContractError);

  std::swap(b.faces[0], b.faces[1]);
  const std::vector<Mesh> different{a, b};
  CHECK_THROWS_AS(MeshSequence::from_meshes(different), ValidationError);
}

TEST_CASE("OBJ round trip keeps faces exactly and vertices within 1e-8") {
  const Mesh m = tube(6, 9, 7);
  std::stringstream buf;
  write_obj(m, buf);
  const Mesh back = parse_obj(buf);
  CHECK(back.faces == m.faces);
  REQUIRE(back.vertex_count() == m.vertex_count());
  double worst = 0;
  for (std::size_t i = 0; i < m.vertex_count(); ++i) {
    for (int k = 0; k < 3; ++k) worst = std::max(worst, std::abs(back.vertices[i][k] - m.vertices[i][k]));
  }
  CHECK(worst <= 1e-8);

  const auto dir = scratch_dir("roundtrip");
  save_obj(m, dir / "m.obj");
  CHECK(load_obj(dir / "m.obj").faces == m.faces);
}

TEST_CASE("OBJ writer round-trips doubles exactly and writes 1-based faces") {
  const Mesh m{{{0.1234567891234, -2, 1e-12}, {123456.789012345678, 0, 0}, {0, 1, 0.1 + 0.2}}, {{0, 1, 2}}};
  std::stringstream buf;
  write_obj(m, buf);
  const std::string text = buf.str();
  CHECK(text.rfind("v 0.1234567891234 -2 ", 0) == 0);
  CHECK(text.find("\nv 1 0 0\n") == std::string::npos);
  CHECK(text.substr(text.size() - 8) == "f 1 2 3\n");
  CHECK(parse_obj(buf) == m);
}

TEST_CASE("OBJ faces with slashes and polygons") {
  const std::string verts = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\n";
  CHECK(parse(verts + "f 1/1/1 2/2/2 3/3/3\n").faces == std::vector<Face>{{0, 1, 2}});
  CHECK(parse(verts + "f 1//4 2//4 3//4\n").faces == std::vector<Face>{{0, 1, 2}});
  CHECK(parse(verts + "f 1/7 2/8 3/9\n").faces == std::vector<Face>{{0, 1, 2}});
  CHECK(parse(verts + "f 1 2 3 4\n").faces == std::vector<Face>{{0, 1, 2}, {0, 2, 3}});
  CHECK(parse(verts + "f -4 -3 -2\n").faces == std::vector<Face>{{0, 1, 2}});
}

TEST_CASE("OBJ ignores other records, comments and extra vertex components") {
  const Mesh m = parse(
      "# header\nmtllib x.mtl\no thing\nv 0 0 0 1\nvn 0 0 1\nvt 0.5 0.5\nv 1 0 0\nv 0 1 0 # trailing\n"
      "usemtl m\ns off\n\nf 1 2 3\n");
  CHECK(m.vertex_count() == 3);
  CHECK(m.faces == std::vector<Face>{{0, 1, 2}});
}

TEST_CASE("OBJ malformed records report the line number") {
  auto line_of = [](const std::string& text) -> std::size_t {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of("v 0 0 0\nv 1 x 0\n") == 2);
  CHECK(line_of("v 0 0 0\nv 1 0 0\nv 0 1 0\n\nf 1 2\n") == 5);
  CHECK(line_of("v 0 0\n") == 1);
  CHECK(line_of("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 a 3\n") == 4);
  CHECK(line_of("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n") == 4);
}

TEST_CASE("OBJ semantic errors are validation errors") {
  CHECK_THROWS_AS(parse("v 0 nan 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n"), ValidationError);
  CHECK_THROWS_AS(parse("v inf 0 0\n"), ValidationError);
  CHECK_THROWS_AS(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 4\n"), ValidationError);
  CHECK_THROWS_AS(parse("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 2\n"), ValidationError);
  CHECK_THROWS_AS(load_obj("/nonexistent/aniformer.obj"), IoError);
}

TEST_CASE("neighborhood of a single triangle") {
  const Neighborhood n = build_neighborhood(std::vector<Face>{{0, 1, 2}}, 3);
  CHECK(n.adjacency[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(n.adjacency[1] == std::vector<std::uint32_t>{0, 2});
  CHECK(n.adjacency[2] == std::vector<std::uint32_t>{0, 1});
}

TEST_CASE("shared edge appears once") {
  const Neighborhood n = build_neighborhood(std::vector<Face>{{0, 1, 2}, {1, 3, 2}}, 4);
  const auto edges = n.edges();
  CHECK(edges.size() == 5);
  CHECK(std::count(edges.begin(), edges.end(), std::make_pair(1u, 2u)) == 1);
  CHECK(n.adjacency[0] == std::vector<std::uint32_t>{1, 2});
  CHECK(n.adjacency[3] == std::vector<std::uint32_t>{1, 2});
}

TEST_CASE("neighborhood matches a brute-force face scan") {
  const Mesh m = permute_vertices(tube(7, 10, 3), random_perm(70, 4));
  const Neighborhood n = build_neighborhood(m);
  const std::size_t v = m.vertex_count();
  for (std::uint32_t p = 0; p < v; ++p) {
    for (std::uint32_t u = 0; u < v; ++u) {
      bool share = false;
      for (const Face& f : m.faces) {
        const bool has_p = f[0] == p || f[1] == p || f[2] == p;
        const bool has_u = f[0] == u || f[1] == u || f[2] == u;
        share = share || (p != u && has_p && has_u);
      }
      const bool listed = std::binary_search(n.adjacency[p].begin(), n.adjacency[p].end(), u);
      CHECK(listed == share);
    }
    CHECK(std::is_sorted(n.adjacency[p].begin(), n.adjacency[p].end()));
    CHECK(std::adjacent_find(n.adjacency[p].begin(), n.adjacency[p].end()) == n.adjacency[p].end());
  }
}

TEST_CASE("neighborhood is symmetric without self loops") {
  const Neighborhood n = build_neighborhood(tube(5, 8, 9));
  for (std::uint32_t p = 0; p < n.vertex_count(); ++p) {
    for (std::uint32_t u : n.adjacency[p]) {
      CHECK(u != p);
      CHECK(std::binary_search(n.adjacency[u].begin(), n.adjacency[u].end(), p));
    }
  }
}

TEST_CASE("permutation: identity, inverse and geometry") {
  const Mesh m = tube(6, 8, 11);
  std::vector<std::uint32_t> id(m.vertex_count());
  std::iota(id.begin(), id.end(), 0u);
  CHECK(permute_vertices(m, id) == m);

  const auto perm = random_perm(m.vertex_count(), 12);
  const Mesh shuffled = permute_vertices(m, perm);
  CHECK(shuffled.vertices != m.vertices);
  for (std::size_t i = 0; i < m.vertex_count(); ++i) CHECK(shuffled.vertices[perm[i]] == m.vertices[i]);
  CHECK(permute_vertices(shuffled, inverse_permutation(perm)) == m);

  CHECK(sorted_edge_lengths(shuffled) == sorted_edge_lengths(m));
  CHECK(sorted_face_areas(shuffled) == sorted_face_areas(m));

  const MeshSequence seq = MeshSequence::repeat(m, 3);
  const MeshSequence seq_shuffled = permute_vertices(seq, perm);
  CHECK(seq_shuffled.faces == shuffled.faces);
  CHECK(seq_shuffled.frames[2] == shuffled.vertices);
}

TEST_CASE("non-bijective permutations are rejected") {
  const Mesh m{{{0, 0, 0}, {1, 0, 0}, {0, 1, 0}}, {{0, 1, 2}}};
  CHECK_THROWS_AS(permute_vertices(m, std::vector<std::uint32_t>{0, 0, 1}), ValidationError);
  CHECK_THROWS_AS(permute_vertices(m, std::vector<std::uint32_t>{0, 1, 3}), ValidationError);
  CHECK_THROWS_AS(permute_vertices(m, std::vector<std::uint32_t>{0, 1}), ValidationError);
  CHECK_THROWS_AS(inverse_permutation(std::vector<std::uint32_t>{1, 1}), ValidationError);
}

TEST_CASE("bounding box and diagonal") {
  MeshSequence seq{{{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}}, {{0, 0, -2}, {1, 0, 0}, {0, 2, 0}}}, {{0, 1, 2}}};
  const Bounds b = bounding_box(seq);
  CHECK(b.lo == Vec3{0, 0, -2});
  CHECK(b.hi == Vec3{1, 2, 0});
  CHECK(b.diagonal() == doctest::Approx(3.0));
}

TEST_CASE("uniform noise") {
  const Mesh m = tube(4, 6, 21);
  const MeshSequence seq = MeshSequence::repeat(m, 2);
  CHECK(add_uniform_noise(seq, 0.0, 5) == seq);
  CHECK_THROWS_AS(add_uniform_noise(seq, -0.01, 5), ValidationError);

  const double amplitude = 0.02;
  const double a = amplitude * bounding_box(seq).diagonal();
  const MeshSequence noisy = add_uniform_noise(seq, amplitude, 5);
  CHECK(noisy.faces == seq.faces);
  CHECK(add_uniform_noise(seq, amplitude, 5) == noisy);
  CHECK(add_uniform_noise(seq, amplitude, 6) != noisy);
  double worst = 0;
  bool any_moved = false;
  for (std::size_t t = 0; t < 2; ++t) {
    for (std::size_t i = 0; i < m.vertex_count(); ++i) {
      for (int k = 0; k < 3; ++k) {
        const double d = std::abs(noisy.frames[t][i][k] - seq.frames[t][i][k]);
        worst = std::max(worst, d);
        any_moved = any_moved || d > 0;
      }
    }
  }
  CHECK(any_moved);
  CHECK(worst <= a);
}

TEST_CASE("uniform noise has zero mean within three sigma") {
  // One unit-diagonal point pair; 50000 vertices x 2 coordinates used = 1e5 draws.
  const std::size_t n = 50000;
  MeshSequence seq;
  seq.frames.emplace_back(n, Vec3{0, 0, 0});
  seq.frames[0][0] = {1, 0, 0};
  const double amplitude = 0.1;
  const double a = amplitude * 1.0;
  const MeshSequence noisy = add_uniform_noise(seq, amplitude, 99);
  double sum = 0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 1; k < 3; ++k) {
      sum += noisy.frames[0][i][k] - seq.frames[0][i][k];
      ++count;
    }
  }
  REQUIRE(count == 100000);
  const double sigma_of_mean = a / std::sqrt(3.0) / std::sqrt(static_cast<double>(count));
  CHECK(std::abs(sum / static_cast<double>(count)) < 3.0 * sigma_of_mean);
}

TEST_CASE("sequence directory round trip") {
  const Mesh m = tube(4, 5, 31);
  MeshSequence seq = MeshSequence::repeat(m, 3);
  seq.frames[1][0][0] += 0.5;
  const auto dir = scratch_dir("sequence");
  save_sequence(seq, dir / "seq", SequenceRole::kGroundTruth, 30.0);
  CHECK(std::filesystem::exists(dir / "seq" / "frame_0000.obj"));
  CHECK(std::filesystem::exists(dir / "seq" / "frame_0002.obj"));

  SequenceManifest manifest;
  const MeshSequence back = load_sequence(dir / "seq", &manifest);
  CHECK(manifest.frame_count == 3);
  CHECK(manifest.vertex_count == 20);
  CHECK(manifest.role == SequenceRole::kGroundTruth);
  REQUIRE(manifest.fps.has_value());
  CHECK(*manifest.fps == 30.0);
  CHECK(back.faces == seq.faces);
  CHECK(back.frames[1][0][0] == doctest::Approx(seq.frames[1][0][0]).epsilon(1e-8));

  save_sequence(seq, dir / "nofps", SequenceRole::kDriving);
  load_sequence(dir / "nofps", &manifest);
  CHECK_FALSE(manifest.fps.has_value());
  CHECK(manifest.role == SequenceRole::kDriving);
}

TEST_CASE("sequence directory errors") {
  const auto dir = scratch_dir("errors");
  CHECK_THROWS_AS(load_sequence(dir / "missing"), IoError);

  const MeshSequence seq = MeshSequence::repeat(tube(3, 4, 1), 2);
  save_sequence(seq, dir / "a", SequenceRole::kTarget);
  std::ofstream(dir / "a" / "manifest.json") << R"({"frame_count": 2, "vertex_count": 99, "role": "target"})";
  CHECK_THROWS_AS(load_sequence(dir / "a"), ValidationError);
  std::ofstream(dir / "a" / "manifest.json") << R"({"frame_count": 2, "vertex_count": 12, "role": "bogus"})";
  CHECK_THROWS_AS(load_sequence(dir / "a"), ValidationError);
  std::ofstream(dir / "a" / "manifest.json") << "{not json";
  CHECK_THROWS_AS(load_sequence(dir / "a"), ParseError);

  CHECK(frame_file_name(12) == "frame_0012.obj");
  CHECK(parse_sequence_role("ground_truth") == SequenceRole::kGroundTruth);
  CHECK(to_string(SequenceRole::kGenerated) == "generated");
}
