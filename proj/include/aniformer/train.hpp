#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "aniformer/gradcheck.hpp"
#include "aniformer/loss.hpp"
#include "aniformer/model.hpp"
#include "aniformer/synth.hpp"

namespace aniformer {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  friend bool operator==(const AdamConfig&, const AdamConfig&) = default;
};

// Adam over a fixed parameter list. Moments live in the parameter precision.
template <typename Real>
class Adam {
 public:
  Adam(std::vector<NamedTensor<Real>> params, AdamConfig config = {});

  // Reads each parameter's gradient (absent = zero). A non-finite gradient
  // raises NumericalError naming the parameter before anything is modified.
  void step(double lr);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor<Real>>& first_moments() const { return m_; }
  const std::vector<Tensor<Real>>& second_moments() const { return v_; }

  std::vector<NamedTensor<float>> state_tensors() const;
  void load_state(const std::vector<NamedTensor<float>>& tensors, std::size_t steps);

 private:
  std::vector<NamedTensor<Real>> params_;
  AdamConfig config_;
  std::vector<Tensor<Real>> m_;
  std::vector<Tensor<Real>> v_;
  std::size_t steps_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

// The five model/objective combinations of the ablation study.
enum class Variant { kRegressionHead, kWithoutHead, kMotionOnly, kAppearanceOnly, kFull };

std::string to_string(Variant v);
std::string variant_label(Variant v);
Variant parse_variant(const std::string& text);
inline constexpr Variant kAllVariants[] = {Variant::kRegressionHead, Variant::kWithoutHead, Variant::kMotionOnly,
                                          Variant::kAppearanceOnly, Variant::kFull};

struct TrainingConfig {
  double learning_rate = 5e-5;
  std::vector<std::size_t> milestones{80, 120, 160};
  double lr_gamma = 0.1;
  std::size_t epochs = 200;
  std::size_t batch_size = 2;
  std::size_t window = 3;
  LossWeights weights;
  LossOptions loss;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::size_t pairs_per_epoch = 100;
  std::size_t checkpoint_every = 0;  // epochs; 0 = final checkpoint only
  std::size_t eval_every = 0;        // epochs; 0 = final evaluation only
  ModelConfig model;

  void validate() const;
  friend bool operator==(const TrainingConfig&, const TrainingConfig&) = default;
};

// The reduced budget used by the ablation experiment (30 epochs, toy widths).
TrainingConfig toy_training_config();

// Applies a variant's head and loss weights to a base config.
TrainingConfig variant_config(const TrainingConfig& base, Variant variant, std::size_t vertex_count);

std::string training_config_to_json(const TrainingConfig& config);
TrainingConfig training_config_from_json(const std::string& text);

// base_lr * gamma^(number of milestones <= epoch).
double lr_at(std::size_t epoch, const TrainingConfig& config);

struct EvalOptions {
  double noise_amplitude = 0.0;  // fraction of the driving bounding-box diagonal
  std::uint64_t noise_seed = 0;
  bool seen = true;
  bool unseen = true;
};

struct PairScore {
  bool seen = true;
  std::size_t motion = 0;
  double pmd = 0.0;
};

struct EvalReport {
  std::vector<PairScore> pairs;
  double seen_pmd = 0.0;    // mean over seen pairs (NaN when none evaluated)
  double unseen_pmd = 0.0;  // mean over unseen pairs (NaN when none evaluated)
};

// Multi-frame models animate the whole driving sequence by sliding windows.
// Regression-head models predict one frame per stride-T window, scored
// against that window's last ground-truth frame.
EvalReport evaluate(const AniFormer<float>& model, const DatasetManifest& manifest, const EvalOptions& options = {});

struct StepRecord {
  std::size_t epoch = 0;
  std::size_t step = 0;
  double loss_total = 0.0;
  double loss_r = 0.0;
  double loss_m = 0.0;
  double loss_a = 0.0;
  std::optional<double> pmd_eval;
};

std::string to_json_line(const StepRecord& record);

struct TrainOptions {
  std::filesystem::path out_dir;  // empty: no files written
  bool resume = false;            // continue from out_dir's latest checkpoint
  std::function<void(const StepRecord&)> on_step;
  bool final_eval = true;
};

struct TrainResult {
  AniFormer<float> model;
  std::vector<StepRecord> log;  // records produced by this call
  std::optional<EvalReport> baseline;
  std::optional<EvalReport> final_eval;
  std::size_t steps = 0;
};

// Files in out_dir: model.ckpt (+ .json), optimizer.ckpt, resume.json,
// log.jsonl, eval.json, and checkpoints/epoch_NNNN.ckpt at the cadence.
// Non-finite losses raise NumericalError; files from the last completed
// checkpoint are left untouched.
TrainResult train(const DatasetManifest& manifest, const TrainingConfig& config, const TrainOptions& options = {});

struct AblationRow {
  Variant variant = Variant::kFull;
  std::vector<std::uint64_t> seeds;
  std::vector<double> seen_pmd;  // one per seed
  std::vector<double> unseen_pmd;
  double median_seen = 0.0;
  double median_unseen = 0.0;
};

struct AblationOptions {
  std::vector<Variant> variants{std::begin(kAllVariants), std::end(kAllVariants)};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::filesystem::path out_dir;  // per-run subdirectories when set
  std::function<void(Variant, std::uint64_t, const EvalReport&)> on_run;
};

std::vector<AblationRow> run_ablation(const DatasetManifest& manifest, const TrainingConfig& base,
                                      const AblationOptions& options = {});

double median(std::vector<double> values);
std::string ablation_csv(const std::vector<AblationRow>& rows);
std::string ablation_table(const std::vector<AblationRow>& rows);

// Full-objective finite-difference check on the fixed toy instance (T = 3,
// V = 24, C = 8, encoders 8/8/4/4) at h = 1e-5 and tolerance 1e-4.
struct ToyGradcheck {
  GradcheckReport report;
  std::size_t parameter_count = 0;
  std::size_t vertex_count = 0;
};
ToyGradcheck toy_objective_gradcheck();

}  // namespace aniformer
