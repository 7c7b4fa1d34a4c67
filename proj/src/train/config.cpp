#include <cmath>

#include <json.hpp>

#include "aniformer/errors.hpp"
#include "aniformer/train.hpp"

namespace aniformer {

namespace {

using nlohmann::json;

struct VariantInfo {
  Variant variant;
  const char* key;
  const char* label;
};

constexpr VariantInfo kVariantInfo[] = {
    {Variant::kRegressionHead, "regression_head", "Regression Head"},
    {Variant::kWithoutHead, "without_head", "Without Head"},
    {Variant::kMotionOnly, "motion", "+ Motion Constraint"},
    {Variant::kAppearanceOnly, "appearance", "+ Appearance Constraint"},
    {Variant::kFull, "full", "Full Constraints"},
};

const VariantInfo& info(Variant v) {
  for (const auto& i : kVariantInfo) {
    if (i.variant == v) return i;
  }
  throw ContractError("unknown variant");
}

// Visits every key of an object, rejecting names the callback does not take.
template <typename Fn>
void read_object(const json& j, const std::string& where, Fn fn) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!fn(key, value)) throw ValidationError("unknown key '" + key + "' in " + where);
  }
}

}  // namespace

std::string to_string(Variant v) { return info(v).key; }
std::string variant_label(Variant v) { return info(v).label; }

Variant parse_variant(const std::string& text) {
  for (const auto& i : kVariantInfo) {
    if (text == i.key) return i.variant;
  }
  throw ValidationError("unknown variant '" + text + "'");
}

void TrainingConfig::validate() const {
  if (!(learning_rate > 0 && std::isfinite(learning_rate))) throw ValidationError("learning_rate must be positive");
  if (!(lr_gamma > 0 && std::isfinite(lr_gamma))) throw ValidationError("lr_gamma must be positive");
  for (std::size_t i = 1; i < milestones.size(); ++i) {
    if (milestones[i] <= milestones[i - 1]) throw ValidationError("milestones must be strictly increasing");
  }
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (window == 0) throw ValidationError("window must be positive");
  if (window != model.window) throw ValidationError("training window must equal the model window");
  if (!(loss.motion_eps > 0)) throw ValidationError("motion_eps must be positive");
  weights.validate();
  model.validate();
}

TrainingConfig toy_training_config() {
  TrainingConfig c;
  c.epochs = 30;
  c.learning_rate = 3e-3;
  c.milestones = {20, 25};
  c.pairs_per_epoch = 100;
  return c;
}

TrainingConfig variant_config(const TrainingConfig& base, Variant variant, std::size_t vertex_count) {
  TrainingConfig c = base;
  const LossWeights full = base.weights;
  c.model.regression_head = variant == Variant::kRegressionHead;
  c.model.vertex_count = c.model.regression_head ? vertex_count : base.model.vertex_count;
  c.weights = {full.reconstruction, 0.0, 0.0};
  if (variant == Variant::kMotionOnly || variant == Variant::kFull) c.weights.motion = full.motion;
  if (variant == Variant::kAppearanceOnly || variant == Variant::kFull) c.weights.appearance = full.appearance;
  return c;
}

double lr_at(std::size_t epoch, const TrainingConfig& config) {
  double lr = config.learning_rate;
  for (std::size_t m : config.milestones) {
    if (m <= epoch) lr *= config.lr_gamma;
  }
  return lr;
}

std::string training_config_to_json(const TrainingConfig& c) {
  json j;
  j["learning_rate"] = c.learning_rate;
  j["milestones"] = c.milestones;
  j["lr_gamma"] = c.lr_gamma;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["window"] = c.window;
  j["weights"] = {{"reconstruction", c.weights.reconstruction},
                  {"motion", c.weights.motion},
                  {"appearance", c.weights.appearance}};
  j["loss"] = {{"penalty", to_string(c.loss.penalty)},
               {"motion_reference", to_string(c.loss.motion_reference)},
               {"motion_eps", c.loss.motion_eps}};
  j["adam"] = {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"eps", c.adam.eps}};
  j["seed"] = c.seed;
  j["pairs_per_epoch"] = c.pairs_per_epoch;
  j["checkpoint_every"] = c.checkpoint_every;
  j["eval_every"] = c.eval_every;
  j["model"] = json::parse(model_config_to_json(c.model));
  return j.dump(2);
}

TrainingConfig training_config_from_json(const std::string& text) {
  TrainingConfig c;
  try {
    const json j = json::parse(text);
    read_object(j, "training config", [&](const std::string& key, const json& v) {
      if (key == "learning_rate") c.learning_rate = v.get<double>();
      else if (key == "milestones") c.milestones = v.get<std::vector<std::size_t>>();
      else if (key == "lr_gamma") c.lr_gamma = v.get<double>();
      else if (key == "epochs") c.epochs = v.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = v.get<std::size_t>();
      else if (key == "window") c.window = v.get<std::size_t>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "pairs_per_epoch") c.pairs_per_epoch = v.get<std::size_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = v.get<std::size_t>();
      else if (key == "eval_every") c.eval_every = v.get<std::size_t>();
      else if (key == "model") c.model = model_config_from_json(v.dump());
      else if (key == "weights") {
        read_object(v, "weights", [&](const std::string& k, const json& w) {
          if (k == "reconstruction") c.weights.reconstruction = w.get<double>();
          else if (k == "motion") c.weights.motion = w.get<double>();
          else if (k == "appearance") c.weights.appearance = w.get<double>();
          else return false;
          return true;
        });
      } else if (key == "loss") {
        read_object(v, "loss", [&](const std::string& k, const json& w) {
          if (k == "penalty") c.loss.penalty = parse_penalty(w.get<std::string>());
          else if (k == "motion_reference") c.loss.motion_reference = parse_motion_reference(w.get<std::string>());
          else if (k == "motion_eps") c.loss.motion_eps = w.get<double>();
          else return false;
          return true;
        });
      } else if (key == "adam") {
        read_object(v, "adam", [&](const std::string& k, const json& w) {
          if (k == "beta1") c.adam.beta1 = w.get<double>();
          else if (k == "beta2") c.adam.beta2 = w.get<double>();
          else if (k == "eps") c.adam.eps = w.get<double>();
          else return false;
          return true;
        });
      } else {
        return false;
      }
      return true;
    });
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("training config: ") + e.what(), 0);
  } catch (const json::exception& e) {
    throw ValidationError(std::string("training config: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace aniformer
