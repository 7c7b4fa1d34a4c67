#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "aniformer/errors.hpp"
#include "aniformer/synth.hpp"

namespace aniformer {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

constexpr int kDatasetVersion = 1;

template <typename Fn>
void read_object(const json& j, const std::string& where, Fn fn) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!fn(key, value)) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

json synth_json(const SynthConfig& c) {
  return {{"bone_count", c.bone_count},
          {"rings_per_bone", c.rings_per_bone},
          {"ring_resolution", c.ring_resolution},
          {"extent", c.extent},
          {"length_min", c.length_min},
          {"length_max", c.length_max},
          {"radius_min", c.radius_min},
          {"radius_max", c.radius_max},
          {"bulge_max", c.bulge_max},
          {"motion_amplitude", c.motion_amplitude},
          {"frequency_min", c.frequency_min},
          {"frequency_max", c.frequency_max},
          {"max_harmonics", c.max_harmonics},
          {"target_pose_range", c.target_pose_range}};
}

SynthConfig synth_from(const json& j) {
  SynthConfig c;
  read_object(j, "synth", [&](const std::string& k, const json& v) {
    if (k == "bone_count") c.bone_count = v.get<std::size_t>();
    else if (k == "rings_per_bone") c.rings_per_bone = v.get<std::size_t>();
    else if (k == "ring_resolution") c.ring_resolution = v.get<std::size_t>();
    else if (k == "extent") c.extent = v.get<double>();
    else if (k == "length_min") c.length_min = v.get<double>();
    else if (k == "length_max") c.length_max = v.get<double>();
    else if (k == "radius_min") c.radius_min = v.get<double>();
    else if (k == "radius_max") c.radius_max = v.get<double>();
    else if (k == "bulge_max") c.bulge_max = v.get<double>();
    else if (k == "motion_amplitude") c.motion_amplitude = v.get<double>();
    else if (k == "frequency_min") c.frequency_min = v.get<double>();
    else if (k == "frequency_max") c.frequency_max = v.get<double>();
    else if (k == "max_harmonics") c.max_harmonics = v.get<std::size_t>();
    else if (k == "target_pose_range") c.target_pose_range = v.get<double>();
    else return false;
    return true;
  });
  c.validate();
  return c;
}

json motions_json(const std::vector<MotionEntry>& motions) {
  json out = json::array();
  for (const auto& m : motions) out.push_back({{"seed", m.seed}, {"subject_seed", m.subject_seed}});
  return out;
}

std::vector<MotionEntry> motions_from(const json& j, const std::string& where) {
  if (!j.is_array()) throw ValidationError(where + " must be an array");
  std::vector<MotionEntry> out;
  for (const auto& e : j) {
    MotionEntry m;
    read_object(e, where, [&](const std::string& k, const json& v) {
      if (k == "seed") m.seed = v.get<std::uint64_t>();
      else if (k == "subject_seed") m.subject_seed = v.get<std::uint64_t>();
      else return false;
      return true;
    });
    out.push_back(m);
  }
  return out;
}

// Parse and type errors share one exit path.
template <typename Fn>
auto guarded(const std::string& where, Fn fn) {
  try {
    return fn();
  } catch (const json::parse_error& e) {
    throw ParseError(where + ": " + e.what(), 0);
  } catch (const json::exception& e) {
    throw ValidationError(where + ": " + e.what());
  }
}

}  // namespace

std::string eval_pair_dir(const EvalPair& pair) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s_%03zu", pair.seen ? "seen" : "unseen", pair.motion);
  return std::string("eval/") + buf;
}

std::string dataset_options_to_json(const DatasetOptions& o) {
  const json j = {{"seed", o.seed},
                  {"synth", synth_json(o.synth)},
                  {"seen_motions", o.seen_motions},
                  {"unseen_motions", o.unseen_motions},
                  {"seen_subjects", o.seen_subjects},
                  {"unseen_subjects", o.unseen_subjects},
                  {"train_shapes", o.train_shapes},
                  {"test_shapes", o.test_shapes},
                  {"frames_per_motion", o.frames_per_motion},
                  {"window", o.window},
                  {"pairs_per_epoch", o.pairs_per_epoch},
                  {"min_displacement", o.min_displacement}};
  return j.dump(2);
}

DatasetOptions dataset_options_from_json(const std::string& text) {
  return guarded("dataset options", [&] {
    DatasetOptions o;
    read_object(json::parse(text), "dataset options", [&](const std::string& k, const json& v) {
      if (k == "seed") o.seed = v.get<std::uint64_t>();
      else if (k == "synth") o.synth = synth_from(v);
      else if (k == "seen_motions") o.seen_motions = v.get<std::size_t>();
      else if (k == "unseen_motions") o.unseen_motions = v.get<std::size_t>();
      else if (k == "seen_subjects") o.seen_subjects = v.get<std::size_t>();
      else if (k == "unseen_subjects") o.unseen_subjects = v.get<std::size_t>();
      else if (k == "train_shapes") o.train_shapes = v.get<std::size_t>();
      else if (k == "test_shapes") o.test_shapes = v.get<std::size_t>();
      else if (k == "frames_per_motion") o.frames_per_motion = v.get<std::size_t>();
      else if (k == "window") o.window = v.get<std::size_t>();
      else if (k == "pairs_per_epoch") o.pairs_per_epoch = v.get<std::size_t>();
      else if (k == "min_displacement") o.min_displacement = v.get<double>();
      else return false;
      return true;
    });
    return o;
  });
}

std::string manifest_to_json(const DatasetManifest& m) {
  json pairs = json::array();
  for (const EvalPair& p : m.eval_pairs) {
    const SamplePair sample = make_eval_pair(m, p);
    pairs.push_back({{"seen", p.seen},
                     {"motion", p.motion},
                     {"target_shape_seed", p.target_shape_seed},
                     {"sample_seed", p.sample_seed},
                     {"dir", eval_pair_dir(p)},
                     {"permutation", sample.permutation}});
  }
  const json j = {{"format", "aniformer-dataset"},
                  {"version", kDatasetVersion},
                  {"seed", m.seed},
                  {"synth", synth_json(m.synth)},
                  {"vertex_count", m.synth.vertex_count()},
                  {"frames_per_motion", m.frames_per_motion},
                  {"window", m.window},
                  {"pairs_per_epoch", m.pairs_per_epoch},
                  {"min_displacement", m.min_displacement},
                  {"train_shape_seeds", m.train_shape_seeds},
                  {"test_shape_seeds", m.test_shape_seeds},
                  {"seen_motions", motions_json(m.seen_motions)},
                  {"unseen_motions", motions_json(m.unseen_motions)},
                  {"eval_pairs", pairs}};
  return j.dump(2);
}

DatasetManifest manifest_from_json(const std::string& text) {
  DatasetManifest m = guarded("dataset manifest", [&] {
    DatasetManifest m;
    std::vector<std::vector<std::uint32_t>> permutations;
    std::size_t vertex_count = 0;
    read_object(json::parse(text), "dataset manifest", [&](const std::string& k, const json& v) {
      if (k == "format") {
        if (v.get<std::string>() != "aniformer-dataset") throw ValidationError("not an aniformer dataset manifest");
      } else if (k == "version") {
        if (v.get<int>() != kDatasetVersion) throw ValidationError("unsupported dataset version");
      } else if (k == "seed") m.seed = v.get<std::uint64_t>();
      else if (k == "synth") m.synth = synth_from(v);
      else if (k == "vertex_count") vertex_count = v.get<std::size_t>();
      else if (k == "frames_per_motion") m.frames_per_motion = v.get<std::size_t>();
      else if (k == "window") m.window = v.get<std::size_t>();
      else if (k == "pairs_per_epoch") m.pairs_per_epoch = v.get<std::size_t>();
      else if (k == "min_displacement") m.min_displacement = v.get<double>();
      else if (k == "train_shape_seeds") m.train_shape_seeds = v.get<std::vector<std::uint64_t>>();
      else if (k == "test_shape_seeds") m.test_shape_seeds = v.get<std::vector<std::uint64_t>>();
      else if (k == "seen_motions") m.seen_motions = motions_from(v, "seen_motions");
      else if (k == "unseen_motions") m.unseen_motions = motions_from(v, "unseen_motions");
      else if (k == "eval_pairs") {
        if (!v.is_array()) throw ValidationError("eval_pairs must be an array");
        for (const auto& e : v) {
          EvalPair p;
          read_object(e, "eval pair", [&](const std::string& pk, const json& pv) {
            if (pk == "seen") p.seen = pv.get<bool>();
            else if (pk == "motion") p.motion = pv.get<std::size_t>();
            else if (pk == "target_shape_seed") p.target_shape_seed = pv.get<std::uint64_t>();
            else if (pk == "sample_seed") p.sample_seed = pv.get<std::uint64_t>();
            else if (pk == "permutation") permutations.push_back(pv.get<std::vector<std::uint32_t>>());
            else if (pk != "dir") return false;
            return true;
          });
          m.eval_pairs.push_back(p);
        }
      } else {
        return false;
      }
      return true;
    });
    if (vertex_count != 0 && vertex_count != m.synth.vertex_count()) {
      throw ValidationError("vertex_count disagrees with the synth layout");
    }
    for (const auto& perm : permutations) {
      if (perm.size() != m.synth.vertex_count()) throw ValidationError("stored permutation has the wrong length");
    }
    return m;
  });
  m.validate();
  return m;
}

void write_dataset(const DatasetManifest& manifest, const fs::path& dir) {
  manifest.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  for (const EvalPair& p : manifest.eval_pairs) {
    const SamplePair sample = make_eval_pair(manifest, p);
    const fs::path pair_dir = dir / eval_pair_dir(p);
    save_sequence(sample.driving, pair_dir / "driving", SequenceRole::kDriving);
    save_sequence(sample.ground_truth, pair_dir / "ground_truth", SequenceRole::kGroundTruth);
    save_obj(sample.target, pair_dir / "target.obj");
  }
  const fs::path path = dir / "dataset.json";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << manifest_to_json(manifest) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

DatasetManifest read_dataset(const fs::path& path) {
  const fs::path file = fs::is_directory(path) ? path / "dataset.json" : path;
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open dataset manifest " + file.string());
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return manifest_from_json(text);
}

}  // namespace aniformer
