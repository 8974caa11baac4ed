#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dalign/parameters.hpp"

namespace dalign {

struct AdamHyperParams {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// First/second moment estimates for one parameter tensor.
template <typename T>
struct AdamMoments {
  std::vector<T> first;
  std::vector<T> second;
};

// One bias-corrected Adam update of `param` in place. `step` is the 1-based
// step index after incrementing.
template <typename T>
void adam_update(std::span<T> param, std::span<const T> grad, AdamMoments<T>& moments,
                 const AdamHyperParams& hp, std::uint64_t step);

template <typename T>
class AdamOptimizer {
 public:
  explicit AdamOptimizer(AdamHyperParams hp) : hp_(hp) {}

  // Applies one update to every parameter using its current grad.
  void step(ParameterStore<T>& params);

  std::uint64_t step_count() const { return step_; }
  const AdamHyperParams& hyper_params() const { return hp_; }
  const std::vector<AdamMoments<T>>& moments() const { return moments_; }

 private:
  AdamHyperParams hp_;
  std::vector<AdamMoments<T>> moments_;
  std::uint64_t step_ = 0;
};

}  // namespace dalign
