#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dalign/tensor.hpp"

namespace dalign {

struct GradCheckOptions {
  double tolerance = 1e-5;
  // Base step; the step for entry x is step * max(1, |x|).
  double step = 1e-4;
  // Relative error is |analytic - numeric| / max(|numeric|, denominator_floor).
  double denominator_floor = 1e-3;
  // 0 checks every entry; otherwise a seeded sample of this many per tensor.
  std::size_t max_entries_per_tensor = 0;
  // Entries failing at the base step are re-estimated at step / refine_factor
  // and the closer estimate is kept. Values <= 1 disable the retry.
  double refine_factor = 8.0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_tensor;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t entries_checked = 0;
  bool passed = true;
};

using NamedTensor = std::pair<std::string, Tensor<double>>;

// Compares reverse-mode gradients of the scalar `loss()` with respect to each
// input against fourth-order central differences. The inputs are perturbed in
// place and restored; `loss` must read them afresh on every call.
GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss,
                                        std::vector<NamedTensor> inputs,
                                        const GradCheckOptions& options = {});

GradCheckResult finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                        Tensor<double> x, const GradCheckOptions& options = {});

}  // namespace dalign
