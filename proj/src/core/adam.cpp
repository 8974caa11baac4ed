#include "dalign/adam.hpp"

#include <cmath>

#include "dalign/errors.hpp"

namespace dalign {

template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments,
                 const AdamHyperParams& hp, std::uint64_t step) {
  if (grad.size() != param.size()) {
    throw DimensionError("adam: gradient has " + std::to_string(grad.size()) +
                         " entries for a parameter of " + std::to_string(param.size()));
  }
  if (moments.first.empty() && moments.second.empty()) {
    moments.first.assign(param.size(), T(0));
    moments.second.assign(param.size(), T(0));
  }
  if (moments.first.size() != param.size() || moments.second.size() != param.size()) {
    throw DimensionError("adam: moment buffers do not match parameter size");
  }
  if (step == 0) throw ContractError("adam: step index is 1-based");
  const double t = static_cast<double>(step);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);
  const T b1 = static_cast<T>(hp.beta1), b2 = static_cast<T>(hp.beta2);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const T g = grad[i];
    moments.first[i] = b1 * moments.first[i] + (T(1) - b1) * g;
    moments.second[i] = b2 * moments.second[i] + (T(1) - b2) * g * g;
    const double m_hat = moments.first[i] / correction1;
    const double v_hat = moments.second[i] / correction2;
    param[i] -= static_cast<T>(hp.learning_rate * m_hat / (std::sqrt(v_hat) + hp.epsilon));
  }
}

template <typename T>
void AdamOptimizer<T>::step(ParameterStore<T>& params) {
  if (moments_.empty()) moments_.resize(params.size());
  if (moments_.size() != params.size()) {
    throw DimensionError("adam: optimizer state tracks a different parameter set");
  }
  ++step_;
  std::size_t i = 0;
  for (auto& [name, tensor] : params) {
    adam_update<T>(tensor.data(), std::span<const T>(tensor.grad()), moments_[i++], hp_, step_);
  }
}

template void adam_update<float>(std::span<float>, std::span<const float>, AdamMoments<float>&,
                                 const AdamHyperParams&, std::uint64_t);
template void adam_update<double>(std::span<double>, std::span<const double>, AdamMoments<double>&,
                                  const AdamHyperParams&, std::uint64_t);
template class AdamOptimizer<float>;
template class AdamOptimizer<double>;

}  // namespace dalign
