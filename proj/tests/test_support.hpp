#pragma once

#include <cstdint>
#include <functional>

#include "dalign/gradcheck.hpp"
#include "dalign/ops.hpp"
#include "dalign/random.hpp"

namespace dalign::testing {

template <typename T>
Tensor<T> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<T> t(std::move(shape));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(lo, hi));
  return t;
}

// Contracts an arbitrary tensor against fixed random weights to get a scalar.
inline Tensor<double> contract(const Tensor<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor<double> probe = random_tensor<double>(out.shape(), rng);
  return ops::sum(ops::mul(out, probe));
}

}  // namespace dalign::testing
