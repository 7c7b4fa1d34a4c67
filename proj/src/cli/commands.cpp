#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>

#include <CLI11.hpp>
#include <json.hpp>

#include "aniformer/cli.hpp"
#include "aniformer/errors.hpp"
#include "aniformer/random.hpp"
#include "aniformer/train.hpp"

#ifndef ANIFORMER_VERSION
#define ANIFORMER_VERSION "0.0.0"
#endif

namespace aniformer {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory " + dir.string());
}

struct RunRecord {
  std::string command;
  std::vector<std::string> args;
  json resolved_config = json::object();
  json seeds = json::object();
  json artifact_paths = json::object();
  json extra = json::object();
};

void write_run_json(const fs::path& dir, const RunRecord& r) {
  json j = {{"command", r.command},
            {"argv", r.args},
            {"resolved_config", r.resolved_config},
            {"seeds", r.seeds},
            {"artifact_paths", r.artifact_paths},
            {"tool_version", tool_version()}};
  for (const auto& [k, v] : r.extra.items()) j[k] = v;
  write_file(dir / "run.json", j.dump(2) + "\n");
}

json report_json(const EvalReport& r) {
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"seen_pmd", num(r.seen_pmd)}, {"unseen_pmd", num(r.unseen_pmd)}, {"pair_count", r.pairs.size()}};
}

TrainingConfig preset_config(const std::string& preset) {
  return preset == "toy" ? toy_training_config() : TrainingConfig{};
}

// --config wins over --preset; --epochs and --seed override either.
TrainingConfig resolve_training(const std::string& config_path, const std::string& preset,
                                const std::optional<std::size_t>& epochs, const std::optional<std::uint64_t>& seed) {
  TrainingConfig c = config_path.empty() ? preset_config(preset) : training_config_from_json(read_file(config_path));
  if (epochs) c.epochs = *epochs;
  if (seed) c.seed = *seed;
  c.validate();
  return c;
}

// Shared by every subcommand: the raw argument vector for run.json.
struct Context {
  std::vector<std::string> args;
  std::ostream& out;
  std::ostream& err;
};

int cmd_gen_data(const Context& ctx, const std::string& config_path, const fs::path& out_dir,
                 const std::optional<std::uint64_t>& seed) {
  DatasetOptions options = config_path.empty() ? DatasetOptions{} : dataset_options_from_json(read_file(config_path));
  if (seed) options.seed = *seed;
  const DatasetManifest manifest = build_manifest(options);
  make_dir(out_dir);
  // Stale pair directories from an earlier, larger dataset would linger.
  fs::remove_all(out_dir / "eval");
  write_dataset(manifest, out_dir);

  RunRecord r{"gen-data", ctx.args};
  r.resolved_config = json::parse(dataset_options_to_json(options));
  r.seeds = {{"dataset", options.seed}};
  r.artifact_paths = {{"dataset", (out_dir / "dataset.json").string()}, {"eval_pairs", (out_dir / "eval").string()}};
  write_run_json(out_dir, r);
  ctx.out << "wrote " << manifest.eval_pairs.size() << " evaluation pairs (" << manifest.seen_motions.size()
          << " seen / " << manifest.unseen_motions.size() << " unseen motions, V = " << manifest.synth.vertex_count()
          << ") to " << out_dir.string() << "\n";
  return kExitOk;
}

int cmd_train(const Context& ctx, const TrainingConfig& base, const std::optional<std::string>& variant,
              const fs::path& data, const fs::path& out_dir, bool resume) {
  const DatasetManifest manifest = read_dataset(data);
  TrainingConfig config = base;
  if (variant) config = variant_config(base, parse_variant(*variant), manifest.synth.vertex_count());
  make_dir(out_dir);

  const std::size_t per_epoch = (config.pairs_per_epoch + config.batch_size - 1) / config.batch_size;
  TrainOptions options;
  options.out_dir = out_dir;
  options.resume = resume;
  options.on_step = [&](const StepRecord& rec) {
    if ((rec.step + 1) % per_epoch != 0) return;
    ctx.out << "epoch " << rec.epoch << "  loss " << rec.loss_total << "  (r " << rec.loss_r << ", m " << rec.loss_m
            << ", a " << rec.loss_a << ")\n";
  };
  const TrainResult result = train(manifest, config, options);

  RunRecord r{"train", ctx.args};
  r.resolved_config = {{"training", json::parse(training_config_to_json(config))},
                       {"data", fs::absolute(data).string()},
                       {"resume", resume}};
  if (variant) r.resolved_config["variant"] = *variant;
  r.seeds = {{"training", config.seed}, {"dataset", manifest.seed}};
  r.artifact_paths = {{"model", (out_dir / "model.ckpt").string()},
                      {"log", (out_dir / "log.jsonl").string()},
                      {"eval", (out_dir / "eval.json").string()},
                      {"checkpoints", (out_dir / "checkpoints").string()},
                      {"resume_state", (out_dir / "resume.json").string()}};
  write_run_json(out_dir, r);
  if (result.baseline) ctx.out << "baseline " << report_json(*result.baseline).dump() << "\n";
  if (result.final_eval) ctx.out << "final    " << report_json(*result.final_eval).dump() << "\n";
  return kExitOk;
}

int cmd_ablate(const Context& ctx, const TrainingConfig& base, const fs::path& data, const fs::path& out_dir,
               const std::vector<std::uint64_t>& seeds, const std::vector<std::string>& variant_names) {
  const DatasetManifest manifest = read_dataset(data);
  AblationOptions options;
  options.seeds = seeds;
  options.variants.clear();
  for (const auto& name : variant_names) options.variants.push_back(parse_variant(name));
  options.out_dir = out_dir / "runs";
  options.on_run = [&](Variant v, std::uint64_t seed, const EvalReport& report) {
    ctx.out << variant_label(v) << " seed " << seed << ": seen PMD " << report.seen_pmd << ", unseen PMD "
            << report.unseen_pmd << "\n";
  };
  make_dir(out_dir);
  const auto rows = run_ablation(manifest, base, options);
  write_file(out_dir / "ablation.csv", ablation_csv(rows));
  write_file(out_dir / "ablation.txt", ablation_table(rows));

  RunRecord r{"ablate", ctx.args};
  r.resolved_config = {{"training", json::parse(training_config_to_json(base))},
                       {"data", fs::absolute(data).string()},
                       {"variants", variant_names}};
  r.seeds = {{"training", seeds}, {"dataset", manifest.seed}};
  r.artifact_paths = {{"csv", (out_dir / "ablation.csv").string()},
                      {"table", (out_dir / "ablation.txt").string()},
                      {"runs", (out_dir / "runs").string()}};
  write_run_json(out_dir, r);
  ctx.out << "\n" << ablation_table(rows);
  return kExitOk;
}

int cmd_animate(const Context& ctx, const fs::path& checkpoint, const fs::path& driving_dir,
                const fs::path& target_path, const fs::path& out_dir, double noise, std::uint64_t noise_seed,
                const std::optional<std::uint64_t>& shuffle_seed) {
  if (!(noise >= 0)) throw ValidationError("--noise must be non-negative");
  const AniFormer<float> model = load_model<float>(checkpoint);
  MeshSequence driving = load_sequence(driving_dir);
  Mesh target = load_obj(target_path);
  if (noise > 0) driving = add_uniform_noise(driving, noise, noise_seed);

  // Joint reordering: the output is mapped back to the target's file order.
  std::vector<std::uint32_t> target_perm;
  if (shuffle_seed) {
    target_perm = Rng(*shuffle_seed).permutation(target.vertex_count());
    const auto driving_perm = driving.vertex_count() == target.vertex_count()
                                  ? target_perm
                                  : Rng(mix_seed(*shuffle_seed, 1)).permutation(driving.vertex_count());
    driving = permute_vertices(driving, driving_perm);
    target = permute_vertices(target, target_perm);
  }

  const auto start = std::chrono::steady_clock::now();
  MeshSequence generated;
  if (model.config().regression_head) {
    const std::size_t t = model.config().window;
    if (driving.frame_count() < t) throw ContractError("driving sequence is shorter than one window");
    generated.faces = target.faces;
    for (std::size_t s = 0; s + t <= driving.frame_count(); s += t) {
      generated.frames.push_back(forward_regression_head(model, slice_frames(driving, s, t), target).vertices);
    }
  } else {
    generated = sliding_window_animate(model, driving, target);
  }
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (shuffle_seed) generated = permute_vertices(generated, inverse_permutation(target_perm));

  make_dir(out_dir);
  save_sequence(generated, out_dir, SequenceRole::kGenerated);
  const double ms_per_frame = 1e3 * seconds / static_cast<double>(generated.frame_count());

  RunRecord r{"animate", ctx.args};
  r.resolved_config = {{"checkpoint", fs::absolute(checkpoint).string()},
                       {"driving", fs::absolute(driving_dir).string()},
                       {"target", fs::absolute(target_path).string()},
                       {"noise", noise},
                       {"model", json::parse(model_config_to_json(model.config()))}};
  r.seeds = {{"noise", noise_seed}, {"shuffle", shuffle_seed ? json(*shuffle_seed) : json(nullptr)}};
  r.artifact_paths = {{"generated", out_dir.string()}};
  r.extra = {{"timing", {{"frames", generated.frame_count()}, {"ms_per_frame", ms_per_frame}}}};
  write_run_json(out_dir, r);
  ctx.out << "generated " << generated.frame_count() << " frames (V = " << target.vertex_count() << ") in "
          << seconds << " s, " << ms_per_frame << " ms/frame\n";
  return kExitOk;
}

int cmd_eval(const Context& ctx, const fs::path& generated_dir, const fs::path& truth_dir, const fs::path& out_dir) {
  const MeshSequence generated = load_sequence(generated_dir);
  const MeshSequence truth = load_sequence(truth_dir);
  const std::vector<double> frames = pmd_per_frame(generated, truth);
  const double mean = pmd(generated, truth);
  const json report = {{"frame_count", frames.size()}, {"mean_pmd", mean}, {"frame_pmd", frames}};

  make_dir(out_dir);
  write_file(out_dir / "eval.json", report.dump(2) + "\n");
  RunRecord r{"eval", ctx.args};
  r.resolved_config = {{"generated", fs::absolute(generated_dir).string()},
                       {"ground_truth", fs::absolute(truth_dir).string()}};
  r.artifact_paths = {{"report", (out_dir / "eval.json").string()}};
  write_run_json(out_dir, r);
  ctx.out << report.dump() << "\n";
  return kExitOk;
}

int cmd_gradcheck(const Context& ctx, const fs::path& out_dir) {
  const auto start = std::chrono::steady_clock::now();
  const ToyGradcheck check = toy_objective_gradcheck();
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json inputs = json::array();
  for (const auto& in : check.report.inputs) {
    inputs.push_back({{"parameter", in.label},
                      {"max_relative_error", in.max_relative_error},
                      {"analytic_at_worst", in.analytic_at_worst},
                      {"numeric_at_worst", in.numeric_at_worst}});
  }
  const json report = {{"passed", check.report.passed},
                       {"max_relative_error", check.report.worst},
                       {"tolerance", 1e-4},
                       {"step", 1e-5},
                       {"parameter_count", check.parameter_count},
                       {"vertex_count", check.vertex_count},
                       {"seconds", seconds},
                       {"inputs", inputs}};
  make_dir(out_dir);
  write_file(out_dir / "gradcheck.json", report.dump(2) + "\n");
  RunRecord r{"gradcheck", ctx.args};
  r.resolved_config = {{"size", "toy"}};
  r.seeds = {{"model", 8}, {"data", {3, 4, 5, 6}}};
  r.artifact_paths = {{"report", (out_dir / "gradcheck.json").string()}};
  write_run_json(out_dir, r);
  ctx.out << (check.report.passed ? "PASS" : "FAIL") << "  max relative error " << check.report.worst << " over "
          << check.parameter_count << " parameters (" << seconds << " s)\n";
  return check.report.passed ? kExitOk : kExitNumerical;
}

}  // namespace

std::string tool_version() { return ANIFORMER_VERSION; }

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mesh sequence animation: data generation, training, inference and evaluation.", "aniformer"};
  app.set_version_flag("--version", tool_version());
  app.require_subcommand(1);
  app.allow_extras(false);
  const Context ctx{args, out, err};
  std::function<int()> action;

  std::string config_path, preset = "reference";
  std::string out_dir, data_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  std::optional<std::string> variant;
  bool resume = false;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  std::vector<std::string> variants;
  for (Variant v : kAllVariants) variants.push_back(to_string(v));
  std::string checkpoint, driving, target, generated, truth, size = "toy";
  double noise = 0.0;
  std::uint64_t noise_seed = 0;
  std::optional<std::uint64_t> shuffle_seed;
  std::vector<std::string> variant_names = variants;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
  gen->add_option("--config", config_path, "Dataset options JSON")->check(CLI::ExistingFile);
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--seed", seed, "Override the dataset seed");
  gen->callback([&] { action = [&] { return cmd_gen_data(ctx, config_path, out_dir, seed); }; });

  auto add_training_options = [&](CLI::App* cmd, const std::string& default_preset) {
    auto* cfg = cmd->add_option("--config", config_path, "Training config JSON")->check(CLI::ExistingFile);
    cmd->add_option("--preset", preset, "Built-in config when --config is absent")
        ->check(CLI::IsMember({"reference", "toy"}))
        ->default_str(default_preset)
        ->excludes(cfg);
    cmd->add_option("--data", data_dir, "Dataset directory (from gen-data)")->required();
    cmd->add_option("--out", out_dir, "Output directory")->required();
    cmd->add_option("--epochs", epochs, "Override the epoch count");
  };

  auto* train_cmd = app.add_subcommand("train", "Train one model");
  add_training_options(train_cmd, "reference");
  train_cmd->add_option("--seed", seed, "Override the training seed");
  train_cmd->add_option("--variant", variant, "Ablation variant to train")->check(CLI::IsMember(variants));
  train_cmd->add_flag("--resume", resume, "Continue from the output directory's last checkpoint");
  train_cmd->callback([&] {
    action = [&] {
      const auto config = resolve_training(config_path, preset, epochs, seed);
      return cmd_train(ctx, config, variant, data_dir, out_dir, resume);
    };
  });

  auto* ablate = app.add_subcommand("ablate", "Train and compare the ablation variants");
  add_training_options(ablate, "toy");
  ablate->add_option("--seeds", seeds, "Training seeds")->delimiter(',');
  ablate->add_option("--variants", variant_names, "Variants to include")
      ->delimiter(',')
      ->check(CLI::IsMember(variants));
  ablate->callback([&] {
    if (ablate->count("--preset") == 0 && config_path.empty()) preset = "toy";
    action = [&] {
      const auto config = resolve_training(config_path, preset, epochs, std::nullopt);
      return cmd_ablate(ctx, config, data_dir, out_dir, seeds, variant_names);
    };
  });

  auto* animate = app.add_subcommand("animate", "Animate a target mesh with a driving sequence");
  animate->add_option("--checkpoint", checkpoint, "Model checkpoint")->required()->check(CLI::ExistingFile);
  animate->add_option("--driving", driving, "Driving sequence directory")->required()->check(CLI::ExistingDirectory);
  animate->add_option("--target", target, "Target mesh (.obj)")->required()->check(CLI::ExistingFile);
  animate->add_option("--out", out_dir, "Output sequence directory")->required();
  animate->add_option("--noise", noise, "Uniform driving noise, fraction of the bounding-box diagonal");
  animate->add_option("--noise-seed", noise_seed, "Seed of the driving noise");
  animate->add_option("--shuffle-seed", shuffle_seed, "Reorder vertices before inference");
  animate->callback([&] {
    action = [&] { return cmd_animate(ctx, checkpoint, driving, target, out_dir, noise, noise_seed, shuffle_seed); };
  });

  auto* eval = app.add_subcommand("eval", "Point-wise mesh distance between two sequences");
  eval->add_option("--generated", generated, "Generated sequence directory")->required()->check(CLI::ExistingDirectory);
  eval->add_option("--ground-truth", truth, "Ground-truth sequence directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--out", out_dir, "Directory for eval.json and run.json")->default_str(".");
  eval->callback([&] {
    action = [&] { return cmd_eval(ctx, generated, truth, out_dir.empty() ? "." : out_dir); };
  });

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of the full objective");
  grad->add_option("--size", size, "Problem size")->check(CLI::IsMember({"toy"}))->default_str("toy");
  grad->add_option("--out", out_dir, "Directory for gradcheck.json and run.json")->default_str(".");
  grad->callback([&] { action = [&] { return cmd_gradcheck(ctx, out_dir.empty() ? "." : out_dir); }; });

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    // Help and version requests arrive here too, with exit code 0.
    return app.exit(e, out, err) == 0 ? kExitOk : kExitInput;
  }

  try {
    return action();
  } catch (const NumericalError& e) {
    err << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitInput;
  }
}

}  // namespace aniformer
