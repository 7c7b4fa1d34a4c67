#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include <json.hpp>

#include "aniformer/errors.hpp"
#include "aniformer/ops.hpp"
#include "aniformer/random.hpp"
#include "aniformer/train.hpp"

namespace aniformer {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out << text;
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move " + tmp.string() + " into place: " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string epoch_name(std::size_t epoch) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "epoch_%04zu", epoch);
  return buf;
}

double mean_or_nan(double sum, std::size_t count) {
  return count == 0 ? std::numeric_limits<double>::quiet_NaN() : sum / static_cast<double>(count);
}

json report_json(const EvalReport& r) {
  json pairs = json::array();
  for (const auto& p : r.pairs) pairs.push_back({{"seen", p.seen}, {"motion", p.motion}, {"pmd", p.pmd}});
  auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  return {{"seen_pmd", num(r.seen_pmd)}, {"unseen_pmd", num(r.unseen_pmd)}, {"pairs", pairs}};
}

struct SampleLoss {
  Tensor<float> total;
  double r = 0, m = 0, a = 0;
};

SampleLoss sample_objective(const AniFormer<float>& model, const TrainingWindow& w, const TrainingConfig& config) {
  const Tensor<float> d = sequence_tensor<float>(w.driving);
  const Tensor<float> n = mesh_tensor<float>(w.target);
  const Tensor<float> out = model.forward(d, n);
  if (model.config().regression_head) {
    // A single-output head is scored against the window's last frame.
    MeshSequence last;
    last.frames.push_back(w.ground_truth.frames.back());
    const Tensor<float> r = reconstruction_loss(out, sequence_tensor<float>(last));
    return {scale(r, static_cast<float>(config.weights.reconstruction)), static_cast<double>(r.item()), 0.0, 0.0};
  }
  const Tensor<float> g = sequence_tensor<float>(w.ground_truth);
  auto terms = full_objective(out, g, d, n, build_neighborhood(w.target), config.weights, config.loss);
  return {terms.total, terms.reconstruction, terms.motion, terms.appearance};
}

// Config fields that must agree between a run and its resumption.
std::string resume_key(TrainingConfig c) {
  c.epochs = 0;
  return training_config_to_json(c);
}

}  // namespace

std::string to_json_line(const StepRecord& r) {
  json j;
  j["epoch"] = r.epoch;
  j["step"] = r.step;
  j["loss_total"] = r.loss_total;
  j["loss_r"] = r.loss_r;
  j["loss_m"] = r.loss_m;
  j["loss_a"] = r.loss_a;
  if (r.pmd_eval) j["pmd_eval"] = *r.pmd_eval;
  return j.dump();
}

EvalReport evaluate(const AniFormer<float>& model, const DatasetManifest& manifest, const EvalOptions& options) {
  if (!(options.noise_amplitude >= 0)) throw ValidationError("noise amplitude must be non-negative");
  EvalReport report;
  double seen_sum = 0, unseen_sum = 0;
  std::size_t seen_n = 0, unseen_n = 0;
  const std::size_t window = model.config().window;
  for (std::size_t i = 0; i < manifest.eval_pairs.size(); ++i) {
    const EvalPair& spec = manifest.eval_pairs[i];
    if ((spec.seen && !options.seen) || (!spec.seen && !options.unseen)) continue;
    SamplePair pair = make_eval_pair(manifest, spec);
    if (options.noise_amplitude > 0) {
      pair.driving = add_uniform_noise(pair.driving, options.noise_amplitude, mix_seed(options.noise_seed, i));
    }
    double score = 0;
    if (model.config().regression_head) {
      MeshSequence generated, truth;
      for (std::size_t start = 0; start + window <= pair.driving.frame_count(); start += window) {
        const MeshSequence chunk = slice_frames(pair.driving, start, window);
        generated.frames.push_back(forward_regression_head(model, chunk, pair.target).vertices);
        truth.frames.push_back(pair.ground_truth.frames[start + window - 1]);
      }
      score = pmd(generated, truth);
    } else {
      score = pmd(sliding_window_animate(model, pair.driving, pair.target), pair.ground_truth);
    }
    report.pairs.push_back({spec.seen, spec.motion, score});
    (spec.seen ? seen_sum : unseen_sum) += score;
    ++(spec.seen ? seen_n : unseen_n);
  }
  report.seen_pmd = mean_or_nan(seen_sum, seen_n);
  report.unseen_pmd = mean_or_nan(unseen_sum, unseen_n);
  return report;
}

TrainResult train(const DatasetManifest& manifest, const TrainingConfig& config, const TrainOptions& options) {
  config.validate();
  manifest.validate();
  if (manifest.window != config.window) {
    throw ContractError("dataset window " + std::to_string(manifest.window) + " differs from training window " +
                        std::to_string(config.window));
  }
  if (config.model.regression_head && config.model.vertex_count != manifest.synth.vertex_count()) {
    throw ContractError("regression head vertex count does not match the dataset");
  }

  TrainResult result{AniFormer<float>(config.model, config.seed), {}, std::nullopt, std::nullopt, 0};
  AniFormer<float>& model = result.model;
  Adam<float> adam(model.parameters(), config.adam);

  const bool files = !options.out_dir.empty();
  const fs::path ckpt_dir = options.out_dir / "checkpoints";
  const fs::path log_path = options.out_dir / "log.jsonl";
  const fs::path resume_path = options.out_dir / "resume.json";
  std::size_t start_epoch = 0;
  std::size_t step = 0;
  json eval_doc = json::object();

  if (options.resume) {
    if (!files) throw ContractError("resume needs an output directory");
    json state;
    try {
      state = json::parse(read_text(resume_path));
    } catch (const json::exception& e) {
      throw ValidationError(std::string("resume state: ") + e.what());
    }
    if (resume_key(training_config_from_json(state.at("config").dump())) != resume_key(config)) {
      throw ContractError("resume: configuration differs from the interrupted run (only epochs may change)");
    }
    start_epoch = state.at("epochs_completed").get<std::size_t>();
    step = state.at("steps").get<std::size_t>();
    const fs::path base = ckpt_dir / epoch_name(start_epoch);
    assign_parameters(model, read_tensors(base.string() + ".ckpt"));
    adam.load_state(read_tensors(base.string() + ".optim"), state.at("adam_steps").get<std::size_t>());
    fs::resize_file(log_path, state.at("log_bytes").get<std::uintmax_t>());
    if (fs::exists(options.out_dir / "eval.json")) eval_doc = json::parse(read_text(options.out_dir / "eval.json"));
  } else if (files) {
    fs::create_directories(ckpt_dir);
    std::ofstream(log_path, std::ios::trunc);
  }

  if (!options.resume && options.final_eval) {
    result.baseline = evaluate(model, manifest);
    eval_doc["baseline"] = report_json(*result.baseline);
  }
  if (files && !options.resume) {
    // Written now so an interrupted run keeps its baseline.
    write_text_atomic(options.out_dir / "eval.json", eval_doc.dump(2) + "\n");
    if (config.epochs == 0) save_model(model, options.out_dir / "model.ckpt");
  }

  const float inv_batch = 1.0f / static_cast<float>(config.batch_size);
  const auto& params = model.parameters();
  for (std::size_t epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const double lr = lr_at(epoch, config);
    const std::vector<WindowSpec> specs = sample_epoch(manifest, mix_seed(config.seed, epoch), config.pairs_per_epoch);
    std::vector<StepRecord> records;
    for (std::size_t begin = 0; begin < specs.size(); begin += config.batch_size) {
      const std::size_t end = std::min(specs.size(), begin + config.batch_size);
      for (const auto& p : params) Tensor<float>(p.value).zero_grad();
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      for (std::size_t i = begin; i < end; ++i) {
        const SampleLoss loss = sample_objective(model, materialize(manifest, specs[i]), config);
        const double value = static_cast<double>(loss.total.item());
        if (!std::isfinite(value)) {
          throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " + std::to_string(step));
        }
        // Partial final batches are still normalised by the configured size.
        scale(loss.total, inv_batch).backward(GradMode::kAccumulate);
        rec.loss_r += loss.r / static_cast<double>(end - begin);
        rec.loss_m += loss.m / static_cast<double>(end - begin);
        rec.loss_a += loss.a / static_cast<double>(end - begin);
      }
      adam.step(lr);
      rec.loss_total = config.weights.reconstruction * rec.loss_r + config.weights.motion * rec.loss_m +
                       config.weights.appearance * rec.loss_a;
      if (options.on_step) options.on_step(rec);
      records.push_back(rec);
      ++step;
    }

    const bool last = epoch + 1 == config.epochs;
    std::optional<EvalReport> report;
    if (last && options.final_eval) {
      report = evaluate(model, manifest);
      result.final_eval = report;
      eval_doc["final"] = report_json(*report);
    } else if (config.eval_every != 0 && (epoch + 1) % config.eval_every == 0) {
      report = evaluate(model, manifest, {.unseen = false});
    }
    if (report && !records.empty()) records.back().pmd_eval = report->seen_pmd;
    result.log.insert(result.log.end(), records.begin(), records.end());

    if (!files) continue;
    {
      std::ofstream log(log_path, std::ios::app);
      for (const auto& r : records) log << to_json_line(r) << '\n';
      if (!log) throw IoError("cannot append to " + log_path.string());
    }
    const bool cadence = config.checkpoint_every != 0 && (epoch + 1) % config.checkpoint_every == 0;
    if (cadence || last) {
      const fs::path base = ckpt_dir / epoch_name(epoch + 1);
      save_model(model, base.string() + ".ckpt");
      write_tensors(base.string() + ".optim", adam.state_tensors());
      const json state = {{"epochs_completed", epoch + 1},
                          {"steps", step},
                          {"adam_steps", adam.steps()},
                          {"log_bytes", fs::file_size(log_path)},
                          {"config", json::parse(training_config_to_json(config))}};
      write_text_atomic(resume_path, state.dump(2) + "\n");
      save_model(model, options.out_dir / "model.ckpt");
    }
    if (last) write_text_atomic(options.out_dir / "eval.json", eval_doc.dump(2) + "\n");
  }
  result.steps = step;
  return result;
}

}  // namespace aniformer
