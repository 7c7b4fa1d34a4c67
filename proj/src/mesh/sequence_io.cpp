#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "aniformer/errors.hpp"
#include "aniformer/mesh.hpp"

namespace aniformer {

namespace fs = std::filesystem;

std::string to_string(SequenceRole role) {
  switch (role) {
    case SequenceRole::kDriving: return "driving";
    case SequenceRole::kTarget: return "target";
    case SequenceRole::kGenerated: return "generated";
    case SequenceRole::kGroundTruth: return "ground_truth";
  }
  return "driving";
}

SequenceRole parse_sequence_role(const std::string& text) {
  if (text == "driving") return SequenceRole::kDriving;
  if (text == "target") return SequenceRole::kTarget;
  if (text == "generated") return SequenceRole::kGenerated;
  if (text == "ground_truth") return SequenceRole::kGroundTruth;
  throw ValidationError("unknown sequence role '" + text + "'");
}

std::string frame_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%04zu.obj", index);
  return buf;
}

void save_sequence(const MeshSequence& seq, const fs::path& dir, SequenceRole role, std::optional<double> fps) {
  seq.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (std::size_t t = 0; t < seq.frame_count(); ++t) save_obj(seq.frame(t), dir / frame_file_name(t));

  nlohmann::json manifest = {
      {"frame_count", seq.frame_count()}, {"vertex_count", seq.vertex_count()}, {"role", to_string(role)}};
  if (fps) manifest["fps"] = *fps;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

MeshSequence load_sequence(const fs::path& dir, SequenceManifest* manifest) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw IoError("cannot open " + manifest_path.string());
  SequenceManifest m;
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    m.frame_count = j.at("frame_count").get<std::size_t>();
    m.vertex_count = j.at("vertex_count").get<std::size_t>();
    m.role = parse_sequence_role(j.at("role").get<std::string>());
    if (j.contains("fps") && !j.at("fps").is_null()) m.fps = j.at("fps").get<double>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(manifest_path.string() + ": " + e.what(), 0);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(manifest_path.string() + ": " + e.what());
  }
  if (m.frame_count == 0) throw ValidationError(manifest_path.string() + ": frame_count must be positive");

  std::vector<Mesh> meshes;
  meshes.reserve(m.frame_count);
  for (std::size_t t = 0; t < m.frame_count; ++t) {
    meshes.push_back(load_obj(dir / frame_file_name(t)));
    if (meshes.back().vertex_count() != m.vertex_count) {
      throw ValidationError(frame_file_name(t) + " has " + std::to_string(meshes.back().vertex_count()) +
                            " vertices, manifest says " + std::to_string(m.vertex_count));
    }
  }
  MeshSequence seq = MeshSequence::from_meshes(meshes);
  if (manifest) *manifest = m;
  return seq;
}

}  // namespace aniformer
