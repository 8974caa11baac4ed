#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "dalign/random.hpp"
#include "dalign/tensor.hpp"

// Differentiable primitives. Every function is pure over its inputs and, when
// a Tape is active and an input requires gradients, records its adjoint.
namespace dalign::ops {

// Linear algebra ---------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a · bᵀ for a [m×k], b [n×k].
template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

// Elementwise ------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// a [m×n] + bias broadcast over rows; bias holds n values (any rank).
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value);

template <typename T>
Tensor<T> relu(const Tensor<T>& a);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a);

template <typename T>
Tensor<T> tanh(const Tensor<T>& a);

// Reductions and reshaping -----------------------------------------------------

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

template <typename T>
Tensor<T> mean(const Tensor<T>& a);

// Mean over axis 0 of a [m×n] matrix, giving [n].
template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);

// Classification ---------------------------------------------------------------

// Softmax along the last axis with max-subtraction. NaN logits throw.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits);

// Mean over the batch of -w[y] * log softmax(logits)[y], computed through a
// stable log-sum-exp. The sum is divided by the batch size, not by Σw.
template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                 std::span<const T> weights);

// Normalization and regularization ---------------------------------------------

// Row-wise layer normalization of [m×n] with affine gamma/beta of n values.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5));

// Inverted dropout. Identity when !training or rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng);

// Convolution ------------------------------------------------------------------

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

// Cross-correlation of input [Cin×H×W] or [B×Cin×H×W] with kernels
// [Cout×Cin×kh×kw]; the optional bias holds Cout values.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, Conv2dOptions options = {});

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 Conv2dOptions options = {});

// 2×2 average pooling, stride 2, ceil mode (partial windows average their valid cells).
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input);

// [B×C×H×W] -> [B×C].
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// Recurrent cell ---------------------------------------------------------------

template <typename T>
struct LstmParams {
  Tensor<T> input_weight;   // [D × 4H], gate order input, forget, cell, output
  Tensor<T> hidden_weight;  // [H × 4H]
  Tensor<T> bias;           // [4H]
};

template <typename T>
struct LstmState {
  Tensor<T> h;  // [B×H]
  Tensor<T> c;  // [B×H]
};

template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const LstmState<T>& prev, const LstmParams<T>& params);

// Same recurrence from already-projected input gates x·W_x + b ([B×4H]).
template <typename T>
LstmState<T> lstm_step(const Tensor<T>& input_gates, const LstmState<T>& prev,
                       const Tensor<T>& hidden_weight);

}  // namespace dalign::ops
