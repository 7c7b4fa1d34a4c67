#include <cerrno>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "aniformer/errors.hpp"
#include "aniformer/mesh.hpp"

namespace aniformer {

namespace {

std::string_view next_token(std::string_view& rest) {
  const auto begin = rest.find_first_not_of(" \t\r");
  if (begin == std::string_view::npos) {
    rest = {};
    return {};
  }
  rest.remove_prefix(begin);
  const auto end = rest.find_first_of(" \t\r");
  const std::string_view token = rest.substr(0, end);
  rest.remove_prefix(end == std::string_view::npos ? rest.size() : end);
  return token;
}

// strtod accepts "nan"/"inf" spellings so non-finite values reach validation
// instead of being reported as syntax errors.
bool parse_double(std::string_view token, double& out) {
  const std::string s(token);
  char* end = nullptr;
  errno = 0;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size() && !s.empty();
}

// Vertex reference of an `f` token ("i", "i/j", "i//k", "i/j/k"), 1-based or
// negative-relative, resolved against the vertices seen so far.
bool parse_face_index(std::string_view token, std::size_t vertices_seen, long long& out) {
  const std::string_view head = token.substr(0, token.find('/'));
  long long raw = 0;
  const auto [ptr, ec] = std::from_chars(head.data(), head.data() + head.size(), raw);
  if (ec != std::errc() || ptr != head.data() + head.size() || raw == 0) return false;
  out = raw > 0 ? raw - 1 : static_cast<long long>(vertices_seen) + raw;
  return true;
}

}  // namespace

Mesh parse_obj(std::istream& in) {
  Mesh mesh;
  std::string line;
  std::size_t line_no = 0;
  std::vector<long long> polygon;
  std::vector<std::array<long long, 3>> raw_faces;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view rest(line);
    const auto hash = rest.find('#');
    if (hash != std::string_view::npos) rest = rest.substr(0, hash);
    const std::string_view keyword = next_token(rest);
    if (keyword == "v") {
      Vec3 p{};
      for (double& c : p) {
        if (!parse_double(next_token(rest), c)) throw ParseError("malformed vertex record", line_no);
      }
      mesh.vertices.push_back(p);
    } else if (keyword == "f") {
      polygon.clear();
      for (std::string_view tok = next_token(rest); !tok.empty(); tok = next_token(rest)) {
        long long idx = 0;
        if (!parse_face_index(tok, mesh.vertices.size(), idx)) throw ParseError("malformed face index", line_no);
        polygon.push_back(idx);
      }
      if (polygon.size() < 3) throw ParseError("face with fewer than three vertices", line_no);
      for (std::size_t k = 1; k + 1 < polygon.size(); ++k) raw_faces.push_back({polygon[0], polygon[k], polygon[k + 1]});
    }
  }
  for (const auto& f : raw_faces) {
    Face face{};
    for (int k = 0; k < 3; ++k) {
      if (f[k] < 0 || static_cast<std::size_t>(f[k]) >= mesh.vertices.size()) {
        throw ValidationError("face index " + std::to_string(f[k] + 1) + " out of range");
      }
      face[k] = static_cast<std::uint32_t>(f[k]);
    }
    mesh.faces.push_back(face);
  }
  mesh.validate();
  return mesh;
}

Mesh load_obj(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_obj(in);
}

void write_obj(const Mesh& mesh, std::ostream& out) {
  char buf[128];
  // 17 significant digits read back to the same double.
  for (const Vec3& p : mesh.vertices) {
    std::snprintf(buf, sizeof buf, "v %.17g %.17g %.17g\n", p[0], p[1], p[2]);
    out << buf;
  }
  for (const Face& f : mesh.faces) out << "f " << f[0] + 1 << ' ' << f[1] + 1 << ' ' << f[2] + 1 << '\n';
}

void save_obj(const Mesh& mesh, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  write_obj(mesh, out);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace aniformer
