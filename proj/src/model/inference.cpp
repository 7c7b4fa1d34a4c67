#include <algorithm>

#include "aniformer/errors.hpp"
#include "aniformer/model.hpp"

namespace aniformer {

template <typename Real>
Tensor<Real> sequence_tensor(const MeshSequence& seq) {
  const std::size_t t_count = seq.frame_count();
  const std::size_t v = seq.vertex_count();
  Buffer<Real> values(t_count * 3 * v);
  for (std::size_t t = 0; t < t_count; ++t) {
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t k = 0; k < 3; ++k) values[(t * 3 + k) * v + i] = static_cast<Real>(seq.frames[t][i][k]);
    }
  }
  return Tensor<Real>({1, t_count, 3, v}, std::move(values));
}

template <typename Real>
Tensor<Real> mesh_tensor(const Mesh& mesh) {
  MeshSequence one;
  one.frames.push_back(mesh.vertices);
  return sequence_tensor<Real>(one);
}

template <typename Real>
MeshSequence tensor_sequence(const Tensor<Real>& t, const std::vector<Face>& faces) {
  if (t.rank() != 4 || t.extent(0) != 1 || t.extent(2) != 3) {
    throw DimensionError("expected a [1, T, 3, V] tensor, got " + shape_string(t.shape()));
  }
  const std::size_t t_count = t.extent(1);
  const std::size_t v = t.extent(3);
  const auto d = t.data();
  MeshSequence seq;
  seq.faces = faces;
  seq.frames.assign(t_count, std::vector<Vec3>(v));
  for (std::size_t f = 0; f < t_count; ++f) {
    for (std::size_t i = 0; i < v; ++i) {
      for (std::size_t k = 0; k < 3; ++k) seq.frames[f][i][k] = static_cast<double>(d[(f * 3 + k) * v + i]);
    }
  }
  return seq;
}

template <typename Real>
MeshSequence animate_window(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target) {
  if (model.config().regression_head) throw ContractError("animate_window needs a multi-frame model");
  NoGradGuard no_grad;
  return tensor_sequence(model.forward(sequence_tensor<Real>(driving), mesh_tensor<Real>(target)), target.faces);
}

template <typename Real>
Mesh forward_regression_head(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target) {
  if (!model.config().regression_head) throw ContractError("model has no regression head");
  NoGradGuard no_grad;
  return tensor_sequence(model.forward(sequence_tensor<Real>(driving), mesh_tensor<Real>(target)), target.faces)
      .frame(0);
}

std::vector<std::size_t> window_starts(std::size_t length, std::size_t window) {
  if (window == 0) throw ContractError("window must be positive");
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s < length; s += window) starts.push_back(s);
  return starts;
}

template <typename Real>
MeshSequence sliding_window_animate(const AniFormer<Real>& model, const MeshSequence& driving, const Mesh& target) {
  const std::size_t length = driving.frame_count();
  const std::size_t window = model.config().window;
  if (length == 0) throw ContractError("driving sequence is empty");
  MeshSequence out;
  out.faces = target.faces;
  for (std::size_t start : window_starts(length, window)) {
    MeshSequence chunk;
    chunk.faces = driving.faces;
    for (std::size_t k = 0; k < window; ++k) chunk.frames.push_back(driving.frames[std::min(start + k, length - 1)]);
    MeshSequence generated = animate_window(model, chunk, target);
    const std::size_t keep = std::min(window, length - start);
    for (std::size_t k = 0; k < keep; ++k) out.frames.push_back(std::move(generated.frames[k]));
  }
  return out;
}

#define ANIFORMER_INSTANTIATE(Real)                                                                          \
  template Tensor<Real> sequence_tensor<Real>(const MeshSequence&);                                         \
  template Tensor<Real> mesh_tensor<Real>(const Mesh&);                                                     \
  template MeshSequence tensor_sequence<Real>(const Tensor<Real>&, const std::vector<Face>&);               \
  template MeshSequence animate_window<Real>(const AniFormer<Real>&, const MeshSequence&, const Mesh&);      \
  template Mesh forward_regression_head<Real>(const AniFormer<Real>&, const MeshSequence&, const Mesh&);    \
  template MeshSequence sliding_window_animate<Real>(const AniFormer<Real>&, const MeshSequence&, const Mesh&);

ANIFORMER_INSTANTIATE(float)
ANIFORMER_INSTANTIATE(double)

}  // namespace aniformer
