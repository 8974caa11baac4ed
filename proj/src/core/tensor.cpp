#include "dalign/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dalign/errors.hpp"

namespace dalign {

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

template <typename T>
Tensor<T>::Tensor() : storage_(std::make_shared<TensorStorage<T>>()) {
  storage_->shape = {0};
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : storage_(std::make_shared<TensorStorage<T>>()) {
  storage_->data.assign(numel(shape), fill);
  storage_->shape = std::move(shape);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, std::vector<T> values)
    : storage_(std::make_shared<TensorStorage<T>>()) {
  if (numel(shape) != values.size()) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " cannot hold " +
                         std::to_string(values.size()) + " values");
  }
  storage_->shape = std::move(shape);
  storage_->data.assign(values.begin(), values.end());
}

template <typename T>
Tensor<T> Tensor<T>::scalar(T value) {
  return Tensor(Shape{}, std::vector<T>{value});
}

template <typename T>
std::size_t Tensor<T>::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return storage_->shape[axis];
}

template <typename T>
T& Tensor<T>::at(std::size_t row, std::size_t col) {
  return storage_->data[row * storage_->shape[1] + col];
}

template <typename T>
const T& Tensor<T>::at(std::size_t row, std::size_t col) const {
  return storage_->data[row * storage_->shape[1] + col];
}

template <typename T>
T Tensor<T>::item() const {
  if (size() != 1) {
    throw DimensionError("item() requires a single-element tensor, got " + shape_string(shape()));
  }
  return storage_->data[0];
}

template <typename T>
Tensor<T>& Tensor<T>::set_requires_grad(bool flag) {
  storage_->requires_grad = flag;
  if (flag) {
    storage_->grad.assign(size(), T(0));
  } else {
    storage_->grad.clear();
  }
  return *this;
}

template <typename T>
std::span<T> Tensor<T>::grad() {
  if (!requires_grad()) throw ContractError("grad() on a tensor that does not require grad");
  return storage_->grad;
}

template <typename T>
std::span<const T> Tensor<T>::grad() const {
  if (!requires_grad()) throw ContractError("grad() on a tensor that does not require grad");
  return storage_->grad;
}

template <typename T>
void Tensor<T>::zero_grad() {
  std::fill(storage_->grad.begin(), storage_->grad.end(), T(0));
}

template <typename T>
bool Tensor<T>::all_finite() const {
  return std::all_of(storage_->data.begin(), storage_->data.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void Tensor<T>::check_finite(const std::string& what) const {
  for (std::size_t i = 0; i < size(); ++i) {
    if (!std::isfinite(storage_->data[i])) {
      throw NumericError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

template <typename T>
Tensor<T> Tensor<T>::clone() const {
  Tensor copy(shape());
  copy.storage_->data = storage_->data;
  return copy;
}

namespace {

template <typename T>
Tape<T>*& active_tape() {
  thread_local Tape<T>* tape = nullptr;
  return tape;
}

}  // namespace

template <typename T>
Tape<T>::Tape() : previous_(active_tape<T>()) {
  active_tape<T>() = this;
}

template <typename T>
Tape<T>::~Tape() {
  if (active_tape<T>() == this) active_tape<T>() = previous_;
}

template <typename T>
Tape<T>* Tape<T>::current() {
  return active_tape<T>();
}

template <typename T>
void Tape<T>::record(const Tensor<T>& output, std::function<void()> adjoint) {
  if (consumed_) throw ContractError("recording onto a tape that was already backpropagated");
  records_.push_back(Record{output.storage(), std::move(adjoint)});
}

template <typename T>
void Tape<T>::backward(const Tensor<T>& loss) {
  if (consumed_) throw ContractError("backward called twice on the same tape");
  if (loss.size() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_string(loss.shape()));
  }
  const bool on_tape =
      loss.requires_grad() &&
      std::any_of(records_.begin(), records_.end(),
                  [&](const Record& r) { return r.output == loss.storage(); });
  if (!on_tape) throw ContractError("backward on a loss that was not produced on this tape");

  loss.storage()->grad[0] += T(1);
  for (auto it = records_.rbegin(); it != records_.rend(); ++it) it->adjoint();
  consumed_ = true;
  records_.clear();
}

template <typename T>
Tensor<T> make_result(Shape shape, bool record) {
  Tensor<T> out(std::move(shape));
  if (record) out.set_requires_grad(true);
  return out;
}

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs) {
  if (Tape<T>::current() == nullptr) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor<T>* t) { return t->requires_grad(); });
}

template class Tensor<float>;
template class Tensor<double>;
template class Tape<float>;
template class Tape<double>;
template Tensor<float> make_result<float>(Shape, bool);
template Tensor<double> make_result<double>(Shape, bool);
template bool should_record<float>(std::initializer_list<const Tensor<float>*>);
template bool should_record<double>(std::initializer_list<const Tensor<double>*>);

}  // namespace dalign
