#include <algorithm>
#include <set>

#include "aniformer/errors.hpp"
#include "aniformer/random.hpp"
#include "aniformer/synth.hpp"

namespace aniformer {

namespace {

constexpr std::uint64_t kPoseStream = 1;
constexpr std::uint64_t kShuffleStream = 2;

SkeletonPose slice_pose(const SkeletonPose& motion, std::size_t start, std::size_t count) {
  return SkeletonPose(motion.begin() + static_cast<std::ptrdiff_t>(start),
                      motion.begin() + static_cast<std::ptrdiff_t>(start + count));
}

// Skins driving and ground truth over `motion`, poses the target, applies one
// shared shuffle.
SamplePair assemble(const SkeletonPose& motion, std::uint64_t driving_shape_seed, std::uint64_t target_shape_seed,
                    std::uint64_t sample_seed, const SynthConfig& config, const std::optional<PoseFrame>& target_pose) {
  const ShapeParams driving_shape = generate_shape(driving_shape_seed, config);
  const ShapeParams target_shape = generate_shape(target_shape_seed, config);
  const PoseFrame pose = target_pose ? *target_pose : random_static_pose(mix_seed(sample_seed, kPoseStream), config);

  SamplePair out;
  out.permutation = Rng(mix_seed(sample_seed, kShuffleStream)).permutation(config.vertex_count());
  out.driving = permute_vertices(skin_sequence(driving_shape, motion, config.extent), out.permutation);
  out.ground_truth = permute_vertices(skin_sequence(target_shape, motion, config.extent), out.permutation);
  out.target = permute_vertices(skin(target_shape, pose, config.extent), out.permutation);
  return out;
}

std::uint64_t fresh_seed(Rng& rng, std::set<std::uint64_t>& used) {
  for (;;) {
    const std::uint64_t s = rng.next();
    if (used.insert(s).second) return s;
  }
}

void check_disjoint(const std::vector<std::uint64_t>& a, const std::vector<std::uint64_t>& b, const char* what) {
  const std::set<std::uint64_t> sa(a.begin(), a.end());
  if (sa.size() != a.size()) throw ValidationError(std::string(what) + ": duplicate seeds");
  for (std::uint64_t s : b) {
    if (sa.count(s)) throw ValidationError(std::string(what) + ": seed sets overlap");
  }
}

}  // namespace

MeshSequence slice_frames(const MeshSequence& seq, std::size_t start, std::size_t count) {
  if (start + count > seq.frame_count() || count == 0) {
    throw ContractError("frames [" + std::to_string(start) + ", " + std::to_string(start + count) + ") of a " +
                        std::to_string(seq.frame_count()) + "-frame sequence");
  }
  MeshSequence out;
  out.faces = seq.faces;
  out.frames.assign(seq.frames.begin() + static_cast<std::ptrdiff_t>(start),
                    seq.frames.begin() + static_cast<std::ptrdiff_t>(start + count));
  return out;
}

SamplePair make_pair(std::uint64_t motion_seed, std::uint64_t driving_shape_seed, std::uint64_t target_shape_seed,
                     std::uint64_t sample_seed, const SynthConfig& config, std::size_t frame_count,
                     const std::optional<PoseFrame>& target_pose) {
  return assemble(generate_motion(motion_seed, frame_count, config), driving_shape_seed, target_shape_seed,
                  sample_seed, config, target_pose);
}

void DatasetManifest::validate() const {
  synth.validate();
  if (window < 1) throw ValidationError("window must be at least 1");
  if (frames_per_motion < 3 || frames_per_motion < window) {
    throw ValidationError("frames_per_motion must be at least 3 and at least the window");
  }
  if (train_shape_seeds.empty() || test_shape_seeds.empty()) throw ValidationError("shape seed lists are empty");
  if (seen_motions.empty()) throw ValidationError("no seen motions");
  check_disjoint(train_shape_seeds, test_shape_seeds, "train/test shapes");
  std::vector<std::uint64_t> seen, unseen;
  for (const auto& m : seen_motions) seen.push_back(m.seed);
  for (const auto& m : unseen_motions) unseen.push_back(m.seed);
  check_disjoint(seen, unseen, "seen/unseen motions");
  check_disjoint(unseen, {}, "unseen motions");
  for (const EvalPair& p : eval_pairs) {
    if (p.motion >= (p.seen ? seen_motions.size() : unseen_motions.size())) {
      throw ValidationError("evaluation pair references a missing motion");
    }
  }
}

DatasetManifest build_manifest(const DatasetOptions& options) {
  options.synth.validate();
  if (options.seen_subjects == 0 || (options.unseen_motions > 0 && options.unseen_subjects == 0)) {
    throw ValidationError("every motion split needs at least one driving subject");
  }
  DatasetManifest m;
  m.seed = options.seed;
  m.synth = options.synth;
  m.frames_per_motion = options.frames_per_motion;
  m.window = options.window;
  m.pairs_per_epoch = options.pairs_per_epoch;
  m.min_displacement = options.min_displacement;

  Rng rng(mix_seed(options.seed, 0xda7a));
  std::set<std::uint64_t> used;
  auto draw = [&](std::size_t n) {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < n; ++i) out.push_back(fresh_seed(rng, used));
    return out;
  };
  m.train_shape_seeds = draw(options.train_shapes);
  m.test_shape_seeds = draw(options.test_shapes);
  const auto seen_subjects = draw(options.seen_subjects);
  const auto unseen_subjects = draw(options.unseen_subjects);

  auto draw_motions = [&](std::size_t n, const std::vector<std::uint64_t>& subjects) {
    std::vector<MotionEntry> out;
    for (std::size_t i = 0; i < n; ++i) {
      const std::uint64_t subject = subjects[i % subjects.size()];
      const ShapeParams shape = generate_shape(subject, options.synth);
      for (;;) {
        const std::uint64_t seed = fresh_seed(rng, used);
        const auto motion = generate_motion(seed, options.frames_per_motion, options.synth);
        if (mean_frame_displacement(skin_sequence(shape, motion, options.synth.extent)) >= options.min_displacement) {
          out.push_back({seed, subject});
          break;
        }
      }
    }
    return out;
  };
  m.seen_motions = draw_motions(options.seen_motions, seen_subjects);
  m.unseen_motions = draw_motions(options.unseen_motions, unseen_subjects);

  for (int split = 0; split < 2; ++split) {
    const std::size_t n = split == 0 ? m.seen_motions.size() : m.unseen_motions.size();
    for (std::size_t i = 0; i < n; ++i) {
      m.eval_pairs.push_back({split == 0, i, m.test_shape_seeds[i % m.test_shape_seeds.size()], rng.next()});
    }
  }
  m.validate();
  return m;
}

SamplePair make_eval_pair(const DatasetManifest& manifest, const EvalPair& pair) {
  const auto& motions = pair.seen ? manifest.seen_motions : manifest.unseen_motions;
  if (pair.motion >= motions.size()) throw ContractError("evaluation pair references a missing motion");
  const MotionEntry& motion = motions[pair.motion];
  return make_pair(motion.seed, motion.subject_seed, pair.target_shape_seed, pair.sample_seed, manifest.synth,
                   manifest.frames_per_motion);
}

std::vector<WindowSpec> sample_epoch(const DatasetManifest& manifest, std::uint64_t epoch_seed, std::size_t n_pairs) {
  manifest.validate();
  Rng rng(mix_seed(manifest.seed, mix_seed(epoch_seed, 0xe9)));
  const std::size_t starts = manifest.frames_per_motion - manifest.window + 1;
  std::vector<WindowSpec> out;
  out.reserve(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) {
    WindowSpec w;
    w.motion = rng.below(manifest.seen_motions.size());
    w.target_shape = rng.below(manifest.train_shape_seeds.size());
    w.sample_seed = rng.next();
    w.start = rng.below(starts);
    w.id = w.motion * manifest.train_shape_seeds.size() + w.target_shape;
    out.push_back(w);
  }
  return out;
}

TrainingWindow materialize(const DatasetManifest& manifest, const WindowSpec& spec) {
  if (spec.motion >= manifest.seen_motions.size() || spec.target_shape >= manifest.train_shape_seeds.size() ||
      spec.start + manifest.window > manifest.frames_per_motion) {
    throw ContractError("window specification outside the dataset");
  }
  const MotionEntry& motion = manifest.seen_motions[spec.motion];
  const SkeletonPose full = generate_motion(motion.seed, manifest.frames_per_motion, manifest.synth);
  SamplePair pair = assemble(slice_pose(full, spec.start, manifest.window), motion.subject_seed,
                             manifest.train_shape_seeds[spec.target_shape], spec.sample_seed, manifest.synth,
                             std::nullopt);
  return TrainingWindow{spec, std::move(pair.driving), std::move(pair.target), std::move(pair.ground_truth)};
}

}  // namespace aniformer
