#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aniformer/errors.hpp"
#include "aniformer/mesh.hpp"
#include "aniformer/tensor.hpp"

namespace aniformer {

// kKey normalises every query row over the keys (out = v A^T); kQuery
// normalises every key column over the queries (out = v A).
enum class SoftmaxAxis { kKey, kQuery };

std::string to_string(SoftmaxAxis axis);
SoftmaxAxis parse_softmax_axis(const std::string& text);

struct ModelConfig {
  std::vector<std::size_t> extractor_widths{16, 32, 64};
  std::vector<std::size_t> encoder_widths{64, 32, 32, 16};
  std::size_t window = 3;      // frames per forward call
  std::size_t max_frames = 3;  // temporal embedding rows
  std::size_t heads = 1;
  SoftmaxAxis softmax_axis = SoftmaxAxis::kKey;
  double output_scale = 1.0;
  // Single-frame perceptron head over the flattened, time-averaged trunk
  // features. Needs the vertex count at construction.
  bool regression_head = false;
  std::size_t head_hidden = 64;
  std::size_t vertex_count = 0;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename Real>
struct NamedTensor {
  std::string name;
  Tensor<Real> value;
};

// Called once per encoder with the attention matrix [N, T, H, V, V].
template <typename Real>
using AttentionTrace = std::function<void(std::size_t encoder, const Tensor<Real>& attention)>;

template <typename Real>
struct ForwardOptions {
  AttentionTrace<Real> trace;
  // Drops the attention term entirely (as if gamma were 0 and q, k, v absent).
  bool skip_attention = false;
};

template <typename Real>
class AniFormer {
 public:
  // Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases 0, gamma 0. Values are
  // drawn in double from per-parameter streams, so float and double models
  // built from one seed agree up to rounding.
  AniFormer(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // Fixed order; tensors share storage with the model.
  const std::vector<NamedTensor<Real>>& parameters() const { return params_; }
  Tensor<Real> parameter(const std::string& name) const;
  std::size_t parameter_count() const;

  // driving [1, T, 3, Vd] with T == window, target [1, 1, 3, V].
  // Returns [1, T, 3, V], or [1, 1, 3, V] with the regression head.
  Tensor<Real> forward(const Tensor<Real>& driving, const Tensor<Real>& target,
                       const ForwardOptions<Real>& options = {}) const;

  // Extractor plus temporal embedding: [1, T, C, V] (pooled to target_vertices
  // when it differs from the driving vertex count).
  Tensor<Real> extract_features(const Tensor<Real>& driving, std::size_t target_vertices) const;

  // Modulated instance norm of block `prefix` (e.g. "encoder.0.main1").
  Tensor<Real> insnorm_modulate(const std::string& prefix, const Tensor<Real>& z, const Tensor<Real>& target) const;

  // Attention with residual of encoder `index`.
  Tensor<Real> attention(std::size_t index, const Tensor<Real>& z, const ForwardOptions<Real>& options = {}) const;

  // Copies values by name from a model of any precision with the same config.
  template <typename Other>
  void copy_parameters_from(const AniFormer<Other>& other);

 private:
  Tensor<Real> encoder(std::size_t index, const Tensor<Real>& z, const Tensor<Real>& target,
                       const ForwardOptions<Real>& options) const;
  Tensor<Real> linear(const std::string& prefix, const Tensor<Real>& x) const;
  void add_parameter(std::string name, Shape shape, double bound, std::uint64_t seed);

  ModelConfig config_;
  std::vector<NamedTensor<Real>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename Real>
template <typename Other>
void AniFormer<Real>::copy_parameters_from(const AniFormer<Other>& other) {
  if (!(other.config() == config_)) throw ContractError("cannot copy parameters between different configurations");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto src = other.parameters()[i].value.data();
    auto dst = params_[i].value.mutable_data();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = static_cast<Real>(src[j]);
  }
}

extern template class AniFormer<float>;
extern template class AniFormer<double>;

// Mesh <-> tensor layout conversion.
template <typename Real>
Tensor<Real> sequence_tensor(const MeshSequence& seq);  // [1, T, 3, V]
template <typename Real>
Tensor<Real> mesh_tensor(const Mesh& mesh);  // [1, 1, 3, V]
template <typename Real>
MeshSequence tensor_sequence(const Tensor<Real>& t, const std::vector<Face>& faces);

// Whole-mesh convenience wrappers.
template <typename Real>
MeshSequence animate_window(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target);
template <typename Real>
Mesh forward_regression_head(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target);

// Consecutive windows of T with stride T; the last partial window repeats
// its final frame and the padded outputs are dropped. Multi-frame models
// only.
template <typename Real>
MeshSequence sliding_window_animate(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target);

// Window start frames used by sliding_window_animate for length L.
std::vector<std::size_t> window_starts(std::size_t length, std::size_t window);

// ---------------------------------------------------------------------------
// Checkpoints: "ANIFCKPT", u32 version, then per tensor u64 name length, name
// bytes, u64 rank, u64 extents, float32 values (all little-endian), then the
// FNV-1a 64 hash of the tensor records. The model config lives in a JSON
// sidecar (<path>.json).

inline constexpr std::uint32_t kCheckpointVersion = 1;

void write_tensors(const std::filesystem::path& path, const std::vector<NamedTensor<float>>& tensors);
std::vector<NamedTensor<float>> read_tensors(const std::filesystem::path& path);

std::filesystem::path config_sidecar(const std::filesystem::path& checkpoint);
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

template <typename Real>
void save_model(const AniFormer<Real>& model, const std::filesystem::path& path);
template <typename Real>
AniFormer<Real> load_model(const std::filesystem::path& path);
// Overwrites the values of `model` from a tensor list (names and shapes must match).
template <typename Real>
void assign_parameters(AniFormer<Real>& model, const std::vector<NamedTensor<float>>& tensors);

}  // namespace aniformer
