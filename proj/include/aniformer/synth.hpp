#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "aniformer/mesh.hpp"

namespace aniformer {

// Generator constants shared by every shape and motion of a dataset.
struct SynthConfig {
  std::size_t bone_count = 4;       // B >= 2
  std::size_t rings_per_bone = 6;   // S >= 1
  std::size_t ring_resolution = 12; // R >= 6
  double extent = 0.95;
  double length_min = 0.7, length_max = 1.3;
  double radius_min = 0.15, radius_max = 0.35;
  double bulge_max = 0.3;
  // Per-joint-angle bound on the sum of harmonic amplitudes (radians).
  double motion_amplitude = 0.9;
  // Frequencies in cycles per sequence, drawn from [f_min, f_max].
  double frequency_min = 0.3, frequency_max = 1.5;
  std::size_t max_harmonics = 3;
  // Static target poses: every angle uniform in [-range, range].
  double target_pose_range = 0.6;

  std::size_t vertex_count() const { return bone_count * rings_per_bone * ring_resolution + 2; }
  void validate() const;
};

// Bones lie along +x in the rest pose. The root is the joint at the left end
// of bone B/2; bones B/2.. form the right sub-chain, bones ..B/2-1 the left.
struct ShapeParams {
  std::uint64_t seed = 0;
  std::vector<double> lengths;
  std::vector<double> radii;
  std::vector<double> bulges;
  std::size_t rings_per_bone = 0;
  std::size_t ring_resolution = 0;

  std::size_t bone_count() const { return lengths.size(); }
  std::size_t vertex_count() const { return bone_count() * rings_per_bone * ring_resolution + 2; }
  void validate() const;
};

// Two angles per bone (about z, then about y) relative to the parent bone.
struct PoseFrame {
  std::vector<double> angles;  // 2B values, bone-major
};

using SkeletonPose = std::vector<PoseFrame>;

ShapeParams generate_shape(std::uint64_t seed, const SynthConfig& config);
PoseFrame rest_pose(std::size_t bone_count);
PoseFrame random_static_pose(std::uint64_t seed, const SynthConfig& config);

// Face list of every mesh skinned from shapes with this ring layout.
std::vector<Face> limb_faces(std::size_t bone_count, std::size_t rings_per_bone, std::size_t ring_resolution);

// Normalized so every pose lies in the ball of radius config.extent around
// the root joint (in particular the rest mesh lies in the extent cube).
Mesh skin(const ShapeParams& shape, const PoseFrame& pose, double extent = 0.95);
MeshSequence skin_sequence(const ShapeParams& shape, const SkeletonPose& motion, double extent = 0.95);

// Sum of up to max_harmonics sinusoids per angle, zero at rest; |angle| is
// bounded by amplitude_scale * config.motion_amplitude.
SkeletonPose generate_motion(std::uint64_t seed, std::size_t frame_count, const SynthConfig& config,
                             double amplitude_scale = 1.0);

// Mean over consecutive frame pairs of the mean vertex displacement.
double mean_frame_displacement(const MeshSequence& seq);

struct SamplePair {
  MeshSequence driving;
  Mesh target;
  MeshSequence ground_truth;
  // Shared shuffle: canonical vertex i is stored at index permutation[i].
  std::vector<std::uint32_t> permutation;
};

// sample_seed drives the target's static pose and the shuffle permutation.
SamplePair make_pair(std::uint64_t motion_seed, std::uint64_t driving_shape_seed, std::uint64_t target_shape_seed,
                     std::uint64_t sample_seed, const SynthConfig& config, std::size_t frame_count,
                     const std::optional<PoseFrame>& target_pose = std::nullopt);

struct MotionEntry {
  std::uint64_t seed = 0;
  std::uint64_t subject_seed = 0;  // driving shape
};

struct EvalPair {
  bool seen = true;
  std::size_t motion = 0;  // index into seen_motions or unseen_motions
  std::uint64_t target_shape_seed = 0;
  std::uint64_t sample_seed = 0;
};

struct DatasetManifest {
  std::uint64_t seed = 0;
  SynthConfig synth;
  std::size_t frames_per_motion = 30;
  std::size_t window = 3;
  std::size_t pairs_per_epoch = 100;
  double min_displacement = 0.004;
  std::vector<std::uint64_t> train_shape_seeds;
  std::vector<std::uint64_t> test_shape_seeds;
  std::vector<MotionEntry> seen_motions;
  std::vector<MotionEntry> unseen_motions;
  std::vector<EvalPair> eval_pairs;

  void validate() const;
};

struct DatasetOptions {
  std::uint64_t seed = 1;
  SynthConfig synth;
  std::size_t seen_motions = 40;
  std::size_t unseen_motions = 10;
  std::size_t seen_subjects = 3;
  std::size_t unseen_subjects = 2;
  std::size_t train_shapes = 8;
  std::size_t test_shapes = 4;
  std::size_t frames_per_motion = 30;
  std::size_t window = 3;
  std::size_t pairs_per_epoch = 100;
  double min_displacement = 0.004;
};

// Motion seeds are drawn until each driving sequence clears min_displacement.
// Each motion gets one evaluation pair against test shape (index mod count).
DatasetManifest build_manifest(const DatasetOptions& options);

SamplePair make_eval_pair(const DatasetManifest& manifest, const EvalPair& pair);

struct WindowSpec {
  std::size_t id = 0;
  std::size_t motion = 0;  // seen motion index
  std::size_t target_shape = 0;  // train shape index
  std::uint64_t sample_seed = 0;
  std::size_t start = 0;
};

struct TrainingWindow {
  WindowSpec spec;
  MeshSequence driving;
  Mesh target;
  MeshSequence ground_truth;
};

std::vector<WindowSpec> sample_epoch(const DatasetManifest& manifest, std::uint64_t epoch_seed, std::size_t n_pairs);
TrainingWindow materialize(const DatasetManifest& manifest, const WindowSpec& spec);

std::string dataset_options_to_json(const DatasetOptions& options);
// Missing keys keep their defaults; unknown keys are rejected.
DatasetOptions dataset_options_from_json(const std::string& text);

// dataset.json: every manifest field, plus one record per evaluation pair
// with its directory and stored shuffle permutation.
std::string manifest_to_json(const DatasetManifest& manifest);
DatasetManifest manifest_from_json(const std::string& text);

// Writes dataset.json and, per evaluation pair, eval/<split>_NNN/ holding
// driving/ and ground_truth/ sequence directories and target.obj.
void write_dataset(const DatasetManifest& manifest, const std::filesystem::path& dir);
// Accepts the dataset directory or the dataset.json path.
DatasetManifest read_dataset(const std::filesystem::path& path);
std::string eval_pair_dir(const EvalPair& pair);

// Frames [start, start + count) of a sequence.
MeshSequence slice_frames(const MeshSequence& seq, std::size_t start, std::size_t count);

}  // namespace aniformer
