#include <cmath>

#include "aniformer/errors.hpp"
#include "aniformer/model.hpp"
#include "aniformer/ops.hpp"
#include "aniformer/random.hpp"

namespace aniformer {

std::string to_string(SoftmaxAxis axis) { return axis == SoftmaxAxis::kKey ? "key" : "query"; }

SoftmaxAxis parse_softmax_axis(const std::string& text) {
  if (text == "key") return SoftmaxAxis::kKey;
  if (text == "query") return SoftmaxAxis::kQuery;
  throw ValidationError("softmax axis must be 'key' or 'query', got '" + text + "'");
}

void ModelConfig::validate() const {
  if (extractor_widths.empty()) throw ValidationError("extractor needs at least one layer");
  if (encoder_widths.empty()) throw ValidationError("model needs at least one encoder");
  for (std::size_t w : extractor_widths) {
    if (w == 0) throw ValidationError("extractor widths must be positive");
  }
  for (std::size_t w : encoder_widths) {
    if (w == 0) throw ValidationError("encoder widths must be positive");
    if (heads == 0 || w % heads != 0) {
      throw ValidationError("head count " + std::to_string(heads) + " must divide encoder width " + std::to_string(w));
    }
  }
  if (extractor_widths.back() != encoder_widths.front()) {
    throw ValidationError("extractor output width must equal the first encoder width");
  }
  if (window == 0) throw ValidationError("window must be positive");
  if (max_frames < window) throw ValidationError("temporal embedding has fewer rows than the window");
  if (!(output_scale > 0)) throw ValidationError("output scale must be positive");
  if (regression_head && (vertex_count < 2 || head_hidden == 0)) {
    throw ValidationError("regression head needs vertex_count >= 2 and head_hidden > 0");
  }
}

template <typename Real>
void AniFormer<Real>::add_parameter(std::string name, Shape shape, double bound, std::uint64_t seed) {
  Buffer<Real> values(element_count(shape), Real(0));
  if (bound > 0) {
    Rng rng(mix_seed(seed, params_.size()));
    for (Real& v : values) v = static_cast<Real>(rng.uniform(-bound, bound));
  }
  index_.emplace(name, params_.size());
  Tensor<Real> t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  t.set_name(name);
  params_.push_back({std::move(name), std::move(t)});
}

template <typename Real>
AniFormer<Real>::AniFormer(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  auto linear_params = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    add_parameter(prefix + ".weight", {out, in}, 1.0 / std::sqrt(static_cast<double>(in)), seed);
    add_parameter(prefix + ".bias", {out}, 0.0, seed);
  };

  std::size_t width = 3;
  for (std::size_t i = 0; i < config_.extractor_widths.size(); ++i) {
    linear_params("extractor." + std::to_string(i), width, config_.extractor_widths[i]);
    width = config_.extractor_widths[i];
  }
  add_parameter("embedding", {config_.max_frames, width}, 1.0 / std::sqrt(static_cast<double>(width)), seed);

  for (std::size_t e = 0; e < config_.encoder_widths.size(); ++e) {
    const std::size_t c = config_.encoder_widths[e];
    linear_params("map." + std::to_string(e), width, c);
    const std::string p = "encoder." + std::to_string(e);
    linear_params(p + ".q", c, c);
    linear_params(p + ".k", c, c);
    linear_params(p + ".v", c, c);
    add_parameter(p + ".gamma", {1}, 0.0, seed);
    for (const char* block : {"main1", "main2", "skip"}) {
      linear_params(p + "." + block + ".scale", 3, c);
      linear_params(p + "." + block + ".shift", 3, c);
      linear_params(p + "." + block + ".linear", c, c);
    }
    width = c;
  }
  if (config_.regression_head) {
    linear_params("head.fc1", width * config_.vertex_count, config_.head_hidden);
    linear_params("head.fc2", config_.head_hidden, 3 * config_.vertex_count);
  } else {
    linear_params("output", width, 3);
  }
}

template <typename Real>
Tensor<Real> AniFormer<Real>::parameter(const std::string& name) const {
  const auto it = index_.find(name);
  if (it != index_.end()) return params_[it->second].value;
  throw ContractError("model has no parameter '" + name + "'");
}

template <typename Real>
std::size_t AniFormer<Real>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

template <typename Real>
Tensor<Real> AniFormer<Real>::linear(const std::string& prefix, const Tensor<Real>& x) const {
  return pointwise_linear(x, parameter(prefix + ".weight"), parameter(prefix + ".bias"));
}

template <typename Real>
Tensor<Real> AniFormer<Real>::extract_features(const Tensor<Real>& driving, std::size_t target_vertices) const {
  if (driving.rank() != 4 || driving.extent(2) != 3) {
    throw DimensionError("driving tensor must be [N, T, 3, V], got " + shape_string(driving.shape()));
  }
  Tensor<Real> h = driving;
  for (std::size_t i = 0; i < config_.extractor_widths.size(); ++i) {
    h = relu(instance_norm(linear("extractor." + std::to_string(i), h)));
  }
  if (h.extent(-1) != target_vertices) h = max_pool_vertices(h, target_vertices);
  return add_frame_embedding(h, parameter("embedding"));
}

namespace {

template <typename Real>
Tensor<Real> modulate(const Tensor<Real>& normalized, const Tensor<Real>& scale, const Tensor<Real>& shift) {
  return mul(scale, normalized) + shift;
}

}  // namespace

template <typename Real>
Tensor<Real> AniFormer<Real>::insnorm_modulate(const std::string& prefix, const Tensor<Real>& z,
                                               const Tensor<Real>& target) const {
  if (target.rank() != 4 || target.extent(2) != 3 || target.extent(-1) != z.extent(-1)) {
    throw DimensionError("target " + shape_string(target.shape()) + " does not match features " +
                         shape_string(z.shape()));
  }
  return modulate(instance_norm(z), linear(prefix + ".scale", target), linear(prefix + ".shift", target));
}

template <typename Real>
Tensor<Real> AniFormer<Real>::attention(std::size_t index, const Tensor<Real>& z,
                                        const ForwardOptions<Real>& options) const {
  if (options.skip_attention) return z;
  const std::string p = "encoder." + std::to_string(index);
  const Shape& s = z.shape();
  const std::size_t heads = config_.heads;
  const Shape split{s[0], s[1], heads, s[2] / heads, s[3]};
  auto project = [&](const char* which) {
    Tensor<Real> t = linear(p + "." + which, z);
    return heads == 1 ? t : reshape(t, split);
  };
  const Tensor<Real> q = project("q");
  const Tensor<Real> k = project("k");
  const Tensor<Real> v = project("v");
  const Tensor<Real> scores = batch_matmul(q, k, true, false);  // [.., V_query, V_key]
  Tensor<Real> attended;
  Tensor<Real> a;
  if (config_.softmax_axis == SoftmaxAxis::kKey) {
    a = softmax(scores, -1);
    attended = batch_matmul(v, a, false, true);
  } else {
    a = softmax(scores, -2);
    attended = batch_matmul(v, a);
  }
  if (options.trace) {
    options.trace(index, heads == 1 ? reshape(a, {s[0], s[1], 1, s[3], s[3]}) : a);
  }
  if (heads != 1) attended = reshape(attended, s);
  return scale(attended, parameter(p + ".gamma")) + z;
}

template <typename Real>
Tensor<Real> AniFormer<Real>::encoder(std::size_t index, const Tensor<Real>& z, const Tensor<Real>& target,
                                      const ForwardOptions<Real>& options) const {
  const std::string p = "encoder." + std::to_string(index) + ".";
  const Tensor<Real> refined = attention(index, z, options);
  const Tensor<Real> normalized = instance_norm(refined);
  auto block = [&](const std::string& name, const Tensor<Real>& n) {
    const Tensor<Real> m = modulate(n, linear(p + name + ".scale", target), linear(p + name + ".shift", target));
    return relu(linear(p + name + ".linear", m));
  };
  const Tensor<Real> h1 = block("main1", normalized);
  const Tensor<Real> h2 = block("main2", instance_norm(h1));
  return h2 + block("skip", normalized);
}

template <typename Real>
Tensor<Real> AniFormer<Real>::forward(const Tensor<Real>& driving, const Tensor<Real>& target,
                                      const ForwardOptions<Real>& options) const {
  const FlushDenormalsGuard flush;
  if (driving.rank() != 4 || driving.extent(2) != 3) {
    throw DimensionError("driving tensor must be [N, T, 3, V], got " + shape_string(driving.shape()));
  }
  if (target.rank() != 4 || target.extent(0) != driving.extent(0) || target.extent(1) != 1 || target.extent(2) != 3) {
    throw DimensionError("target tensor must be [N, 1, 3, V], got " + shape_string(target.shape()));
  }
  if (driving.extent(1) != config_.window) {
    throw ContractError("driving window has " + std::to_string(driving.extent(1)) + " frames, model expects " +
                        std::to_string(config_.window));
  }
  const std::size_t v = target.extent(-1);
  if (config_.regression_head && v != config_.vertex_count) {
    throw DimensionError("regression head built for " + std::to_string(config_.vertex_count) + " vertices, got " +
                         std::to_string(v));
  }
  Tensor<Real> z = extract_features(driving, v);
  for (std::size_t e = 0; e < config_.encoder_widths.size(); ++e) {
    z = encoder(e, linear("map." + std::to_string(e), z), target, options);
  }
  const Real s = static_cast<Real>(config_.output_scale);
  if (!config_.regression_head) return scale(tanh(linear("output", z)), s);

  const std::size_t n = z.extent(0);
  const Tensor<Real> pooled = mean_axis(z, 1);  // [N, C, V]
  const Tensor<Real> flat = reshape(pooled, {n, pooled.extent(1) * v, 1});
  const Tensor<Real> hidden = relu(linear("head.fc1", flat));
  const Tensor<Real> coords = linear("head.fc2", hidden);
  return scale(tanh(reshape(coords, {n, 1, 3, v})), s);
}

template class AniFormer<float>;
template class AniFormer<double>;

}  // namespace aniformer
