#include "dalign/parameters.hpp"

#include <algorithm>
#include <cmath>

#include "dalign/errors.hpp"
#include "dalign/ops.hpp"

namespace dalign {

template <typename T>
Tensor<T>& ParameterStore<T>::add(const std::string& name, Shape shape) {
  if (contains(name)) throw ContractError("duplicate parameter name " + name);
  Tensor<T> t(std::move(shape));
  t.set_requires_grad(true);
  entries_.emplace_back(name, std::move(t));
  return entries_.back().second;
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(),
                     [&](const auto& e) { return e.first == name; });
}

template <typename T>
Tensor<T>& ParameterStore<T>::get(const std::string& name) {
  for (auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw ContractError("unknown parameter " + name);
}

template <typename T>
const Tensor<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.first == name) return e.second;
  }
  throw ContractError("unknown parameter " + name);
}

template <typename T>
std::size_t ParameterStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

template <typename T>
bool ParameterStore<T>::all_finite() const {
  return std::all_of(entries_.begin(), entries_.end(),
                     [](const auto& e) { return e.second.all_finite(); });
}

template <typename T>
bool ParameterStore<T>::grads_finite() const {
  for (const auto& e : entries_) {
    for (T g : e.second.grad()) {
      if (!std::isfinite(g)) return false;
    }
  }
  return true;
}

template <typename T>
ParameterStore<T> ParameterStore<T>::clone() const {
  ParameterStore<T> copy;
  for (const auto& [name, tensor] : entries_) {
    Tensor<T>& t = copy.add(name, tensor.shape());
    std::copy(tensor.data().begin(), tensor.data().end(), t.data().begin());
  }
  return copy;
}

template <typename T>
void init_fan_in_uniform(Tensor<T>& t, std::size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(1.0 / static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  std::fill(t.data().begin(), t.data().end(), value);
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  return ops::add_row(ops::matmul(x, weight), bias);
}

template class ParameterStore<float>;
template class ParameterStore<double>;
template void init_fan_in_uniform<float>(Tensor<float>&, std::size_t, Rng&);
template void init_fan_in_uniform<double>(Tensor<double>&, std::size_t, Rng&);
template void fill<float>(Tensor<float>&, float);
template void fill<double>(Tensor<double>&, double);
template Tensor<float> linear<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&);
template Tensor<double> linear<double>(const Tensor<double>&, const Tensor<double>&,
                                       const Tensor<double>&);

}  // namespace dalign
