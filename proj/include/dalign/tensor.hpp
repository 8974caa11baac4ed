#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace dalign {

// Cache-line aligned allocation. Vectorized kernels choose their peeling from
// the buffer address, so a fixed alignment keeps results independent of where
// the heap happens to place a tensor.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept {
    return true;
  }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_string(const Shape& shape);

template <typename T>
struct TensorStorage {
  Shape shape;
  Buffer<T> data;
  Buffer<T> grad;  // allocated (zero-filled) while requires_grad is set
  bool requires_grad = false;
};

// Dense row-major tensor with shared storage. Copies of a Tensor alias the same
// buffer; use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  Tensor();
  explicit Tensor(Shape shape, T fill = T(0));
  Tensor(Shape shape, std::vector<T> values);

  static Tensor scalar(T value);

  bool defined() const { return static_cast<bool>(storage_); }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return storage_->data.size(); }

  std::span<T> data() { return storage_->data; }
  std::span<const T> data() const { return storage_->data; }
  std::vector<T> to_vector() const { return {storage_->data.begin(), storage_->data.end()}; }

  T& operator[](std::size_t i) { return storage_->data[i]; }
  const T& operator[](std::size_t i) const { return storage_->data[i]; }
  // Row-major 2-D access.
  T& at(std::size_t row, std::size_t col);
  const T& at(std::size_t row, std::size_t col) const;

  // Value of a single-element tensor.
  T item() const;

  bool requires_grad() const { return storage_->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  std::span<T> grad();
  std::span<const T> grad() const;
  void zero_grad();

  bool all_finite() const;
  // Throws NumericError naming `what` when any entry is NaN/Inf.
  void check_finite(const std::string& what) const;

  Tensor clone() const;  // deep copy of data, detached from any tape

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(size());
    for (std::size_t i = 0; i < size(); ++i) out[i] = static_cast<U>((*this)[i]);
    return Tensor<U>(shape(), std::move(out));
  }

  const std::shared_ptr<TensorStorage<T>>& storage() const { return storage_; }
  bool same_storage(const Tensor& other) const { return storage_ == other.storage_; }

 private:
  std::shared_ptr<TensorStorage<T>> storage_;
};

// Ordered record of primitive operations. Constructing a Tape makes it the
// active recorder on the current thread (nesting restores the previous one on
// destruction). Operations only record when a tape is active and at least one
// input requires gradients.
template <typename T>
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape* current();

  // Registers the adjoint of an op whose result is `output`.
  void record(const Tensor<T>& output, std::function<void()> adjoint);

  std::size_t size() const { return records_.size(); }
  bool consumed() const { return consumed_; }

  // Seeds d(loss)/d(loss) = 1 and replays adjoints in reverse creation order,
  // accumulating into every participating tensor's grad. Single use.
  void backward(const Tensor<T>& loss);

 private:
  struct Record {
    std::shared_ptr<TensorStorage<T>> output;
    std::function<void()> adjoint;
  };
  std::vector<Record> records_;
  Tape* previous_ = nullptr;
  bool consumed_ = false;
};

// Output tensor for an op; marks it as differentiable when it will be recorded.
template <typename T>
Tensor<T> make_result(Shape shape, bool record);

template <typename T>
bool should_record(std::initializer_list<const Tensor<T>*> inputs);

}  // namespace dalign
