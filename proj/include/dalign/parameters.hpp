#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "dalign/errors.hpp"
#include "dalign/random.hpp"
#include "dalign/tensor.hpp"

namespace dalign {

// Insertion-ordered set of named trainable tensors. Order is part of the
// checkpoint layout and of optimizer state, so it never changes after build.
template <typename T>
class ParameterStore {
 public:
  Tensor<T>& add(const std::string& name, Shape shape);

  bool contains(const std::string& name) const;
  Tensor<T>& get(const std::string& name);
  const Tensor<T>& get(const std::string& name) const;

  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  bool all_finite() const;
  bool grads_finite() const;

  // Copies values from another store with identical names and shapes.
  template <typename U>
  void assign_from(const ParameterStore<U>& other);

  ParameterStore clone() const;

 private:
  std::vector<std::pair<std::string, Tensor<T>>> entries_;
};

// uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)).
template <typename T>
void init_fan_in_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng);

template <typename T>
void fill(Tensor<T>& t, T value);

// Affine map x·W + b for x [m×in].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

template <typename T>
template <typename U>
void ParameterStore<T>::assign_from(const ParameterStore<U>& other) {
  for (auto& [name, tensor] : entries_) {
    const Tensor<U>& src = other.get(name);
    if (src.shape() != tensor.shape()) {
      throw DimensionError("parameter " + name + " shape mismatch on assign");
    }
    for (std::size_t i = 0; i < tensor.size(); ++i) tensor[i] = static_cast<T>(src[i]);
  }
}

}  // namespace dalign
