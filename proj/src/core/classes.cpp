#include "dalign/classes.hpp"

#include <cmath>
#include <vector>

#include "dalign/errors.hpp"

namespace dalign {

void check_class_id(int id) {
  if (id < 0 || id >= static_cast<int>(kNumClasses)) {
    throw IndexError("class id " + std::to_string(id) + " outside [0, 8)");
  }
}

std::string_view class_name(int id) {
  check_class_id(id);
  return kClassNames[static_cast<std::size_t>(id)];
}

int class_id(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kClassNames[i] == name) return static_cast<int>(i);
  }
  throw IndexError("unknown class name " + std::string(name));
}

namespace {

template <typename T>
ClassDistribution make_distribution(std::span<const T> values) {
  if (values.size() != kNumClasses) {
    throw DimensionError("class distribution needs 8 entries, got " + std::to_string(values.size()));
  }
  ClassDistribution d;
  double total = 0.0;
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    const double p = static_cast<double>(values[i]);
    if (!std::isfinite(p)) throw NumericError("class distribution has a non-finite entry");
    if (p < 0.0 || p > 1.0) throw ContractError("class probability outside [0, 1]");
    d.probs[i] = p;
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw ContractError("class distribution sums to " + std::to_string(total));
  }
  return d;
}

}  // namespace

ClassDistribution ClassDistribution::from(std::span<const double> values) {
  return make_distribution(values);
}

ClassDistribution ClassDistribution::from(std::span<const float> values) {
  return make_distribution(values);
}

ClassDistribution ClassDistribution::one_hot(int id) {
  check_class_id(id);
  ClassDistribution d;
  d.probs[static_cast<std::size_t>(id)] = 1.0;
  return d;
}

ClassDistribution ClassDistribution::uniform() {
  ClassDistribution d;
  d.probs.fill(1.0 / kNumClasses);
  return d;
}

int ClassDistribution::argmax() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < kNumClasses; ++i) {
    if (probs[i] > probs[best]) best = i;
  }
  return static_cast<int>(best);
}

}  // namespace dalign
