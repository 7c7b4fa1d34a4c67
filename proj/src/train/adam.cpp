#include <cmath>

#include "aniformer/errors.hpp"
#include "aniformer/train.hpp"

namespace aniformer {

template <typename Real>
Adam<Real>::Adam(std::vector<NamedTensor<Real>> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  if (!(config_.beta1 >= 0 && config_.beta1 < 1 && config_.beta2 >= 0 && config_.beta2 < 1 && config_.eps > 0)) {
    throw ValidationError("Adam needs 0 <= beta < 1 and eps > 0");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.value.shape(), std::vector<Real>(p.value.size(), Real(0)));
    v_.emplace_back(p.value.shape(), std::vector<Real>(p.value.size(), Real(0)));
  }
}

template <typename Real>
void Adam<Real>::step(double lr) {
  for (const auto& [name, value] : params_) {
    if (!value.has_grad()) continue;
    for (Real g : value.grad()) {
      if (!std::isfinite(static_cast<double>(g))) throw NumericalError("non-finite gradient in parameter '" + name + "'");
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(config_.beta1, t);
  const double bc2 = 1.0 - std::pow(config_.beta2, t);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor<Real> p = params_[k].value;
    auto theta = p.mutable_data();
    auto m = m_[k].mutable_data();
    auto v = v_[k].mutable_data();
    const bool has_grad = p.has_grad();
    const auto grad = has_grad ? p.grad() : std::span<const Real>{};
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      const double mi = config_.beta1 * static_cast<double>(m[i]) + (1.0 - config_.beta1) * g;
      const double vi = config_.beta2 * static_cast<double>(v[i]) + (1.0 - config_.beta2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double update = lr * (mi / bc1) / (std::sqrt(vi / bc2) + config_.eps);
      theta[i] = static_cast<Real>(static_cast<double>(theta[i]) - update);
    }
  }
}

template <typename Real>
std::vector<NamedTensor<float>> Adam<Real>::state_tensors() const {
  std::vector<NamedTensor<float>> out;
  auto as_float = [](const Tensor<Real>& t) {
    const auto d = t.data();
    return Tensor<float>(t.shape(), std::vector<float>(d.begin(), d.end()));
  };
  for (std::size_t k = 0; k < params_.size(); ++k) out.push_back({"adam.m." + params_[k].name, as_float(m_[k])});
  for (std::size_t k = 0; k < params_.size(); ++k) out.push_back({"adam.v." + params_[k].name, as_float(v_[k])});
  return out;
}

template <typename Real>
void Adam<Real>::load_state(const std::vector<NamedTensor<float>>& tensors, std::size_t steps) {
  if (tensors.size() != 2 * params_.size()) throw ValidationError("optimizer state does not match the parameter list");
  for (std::size_t k = 0; k < 2 * params_.size(); ++k) {
    const std::size_t p = k % params_.size();
    const std::string expect = (k < params_.size() ? "adam.m." : "adam.v.") + params_[p].name;
    if (tensors[k].name != expect || tensors[k].value.shape() != params_[p].value.shape()) {
      throw ValidationError("optimizer state entry '" + tensors[k].name + "' does not match '" + expect + "'");
    }
  }
  for (std::size_t k = 0; k < 2 * params_.size(); ++k) {
    auto dst = (k < params_.size() ? m_ : v_)[k % params_.size()].mutable_data();
    const auto src = tensors[k].value.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<Real>(src[i]);
  }
  steps_ = steps;
}

template class Adam<float>;
template class Adam<double>;

}  // namespace aniformer
