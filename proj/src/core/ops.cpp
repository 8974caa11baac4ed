#include "dalign/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

#include "dalign/errors.hpp"

namespace dalign::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using StoragePtr = std::shared_ptr<TensorStorage<T>>;

template <typename T>
ConstMatMap<T> cmap(const Buffer<T>& v, std::size_t rows, std::size_t cols) {
  return ConstMatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
MatMap<T> map(Buffer<T>& v, std::size_t rows, std::size_t cols) {
  return MatMap<T>(v.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
}

template <typename T>
void record(const Tensor<T>& out, std::function<void()> adjoint) {
  Tape<T>::current()->record(out, std::move(adjoint));
}

// Shared body for unary elementwise maps whose derivative is expressible
// from the input and output values.
template <typename T, typename Forward, typename Derivative>
Tensor<T> unary(const Tensor<T>& a, Forward f, Derivative df) {
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  auto x = a.data();
  auto y = out.data();
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = f(x[i]);
  if (rec) {
    StoragePtr<T> as = a.storage(), os = out.storage();
    record(out, [as, os, df] {
      for (std::size_t i = 0; i < os->data.size(); ++i) {
        as->grad[i] += os->grad[i] * df(as->data[i], os->data[i]);
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner dimensions disagree " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool rec = should_record<T>({&a, &b});
  Tensor<T> out = make_result<T>({m, n}, rec);
  auto& as = *a.storage();
  auto& bs = *b.storage();
  map(out.storage()->data, m, n).noalias() = cmap(as.data, m, k) * cmap(bs.data, k, n);
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = b.storage(), op = out.storage();
    record(out, [ap, bp, op, m, k, n] {
      auto dc = cmap(op->grad, m, n);
      if (ap->requires_grad) map(ap->grad, m, k).noalias() += dc * cmap(bp->data, k, n).transpose();
      if (bp->requires_grad) map(bp->grad, k, n).noalias() += cmap(ap->data, m, k).transpose() * dc;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_transposed(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_transposed: inner dimensions disagree " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  const bool rec = should_record<T>({&a, &b});
  Tensor<T> out = make_result<T>({m, n}, rec);
  map(out.storage()->data, m, n).noalias() =
      cmap(a.storage()->data, m, k) * cmap(b.storage()->data, n, k).transpose();
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = b.storage(), op = out.storage();
    record(out, [ap, bp, op, m, k, n] {
      auto dc = cmap(op->grad, m, n);
      if (ap->requires_grad) map(ap->grad, m, k).noalias() += dc * cmap(bp->data, n, k);
      if (bp->requires_grad) map(bp->grad, n, k).noalias() += dc.transpose() * cmap(ap->data, m, k);
    });
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>({n, m}, rec);
  map(out.storage()->data, n, m) = cmap(a.storage()->data, m, n).transpose();
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op, m, n] { map(ap->grad, m, n) += cmap(op->grad, n, m).transpose(); });
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  const bool rec = should_record<T>({&a, &b});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = b.storage(), op = out.storage();
    record(out, [ap, bp, op] {
      for (std::size_t i = 0; i < op->grad.size(); ++i) {
        if (ap->requires_grad) ap->grad[i] += op->grad[i];
        if (bp->requires_grad) bp->grad[i] += op->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  const bool rec = should_record<T>({&a, &b});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = b.storage(), op = out.storage();
    record(out, [ap, bp, op] {
      for (std::size_t i = 0; i < op->grad.size(); ++i) {
        if (ap->requires_grad) ap->grad[i] += op->grad[i];
        if (bp->requires_grad) bp->grad[i] -= op->grad[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  const bool rec = should_record<T>({&a, &b});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = b.storage(), op = out.storage();
    record(out, [ap, bp, op] {
      for (std::size_t i = 0; i < op->grad.size(); ++i) {
        if (ap->requires_grad) ap->grad[i] += op->grad[i] * bp->data[i];
        if (bp->requires_grad) bp->grad[i] += op->grad[i] * ap->data[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias) {
  require_matrix(a, "add_row");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (bias.size() != n) {
    throw DimensionError("add_row: bias of " + std::to_string(bias.size()) +
                         " values for matrix " + shape_string(a.shape()));
  }
  const bool rec = should_record<T>({&a, &bias});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + bias[j];
  }
  if (rec) {
    StoragePtr<T> ap = a.storage(), bp = bias.storage(), op = out.storage();
    record(out, [ap, bp, op, m, n] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const T g = op->grad[i * n + j];
          if (ap->requires_grad) ap->grad[i * n + j] += g;
          if (bp->requires_grad) bp->grad[j] += g;
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor) {
  return unary(a, [factor](T x) { return x * factor; }, [factor](T, T) { return factor; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, T value) {
  return unary(a, [value](T x) { return x + value; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  return unary(
      a, [](T x) { return x > T(0) ? x : T(0); }, [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  return unary(
      a,
      [](T x) {
        if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
        const T e = std::exp(x);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& a) {
  return unary(a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& a) {
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>({}, rec);
  T total = T(0);
  for (T v : a.data()) total += v;
  out[0] = total;
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op] {
      for (T& g : ap->grad) g += op->grad[0];
    });
  }
  return out;
}

template <typename T>
Tensor<T> mean(const Tensor<T>& a) {
  if (a.size() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(a), T(1) / static_cast<T>(a.size()));
}

template <typename T>
Tensor<T> mean_rows(const Tensor<T>& a) {
  require_matrix(a, "mean_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (m == 0) throw DimensionError("mean_rows of a matrix with no rows");
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>({n}, rec);
  map(out.storage()->data, 1, n) = cmap(a.storage()->data, m, n).colwise().mean();
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op, m, n] {
      const T inv = T(1) / static_cast<T>(m);
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) ap->grad[i * n + j] += op->grad[j] * inv;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw DimensionError("reshape: " + shape_string(a.shape()) + " -> " + shape_string(shape));
  }
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>(std::move(shape), rec);
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op] {
      for (std::size_t i = 0; i < op->grad.size(); ++i) ap->grad[i] += op->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_rows(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin > end || end > m) throw IndexError("slice_rows: range out of bounds");
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>({end - begin, n}, rec);
  std::copy(a.data().begin() + begin * n, a.data().begin() + end * n, out.data().begin());
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op, begin, n] {
      for (std::size_t i = 0; i < op->grad.size(); ++i) ap->grad[begin * n + i] += op->grad[i];
    });
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (begin > end || end > n) throw IndexError("slice_cols: range out of bounds");
  const std::size_t w = end - begin;
  const bool rec = should_record<T>({&a});
  Tensor<T> out = make_result<T>({m, w}, rec);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.data().begin() + i * n + begin, w, out.data().begin() + i * w);
  }
  if (rec) {
    StoragePtr<T> ap = a.storage(), op = out.storage();
    record(out, [ap, op, m, n, w, begin] {
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < w; ++j) ap->grad[i * n + begin + j] += op->grad[i * w + j];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of no parts");
  const std::size_t n = parts.front().dim(1);
  std::size_t rows = 0;
  bool rec = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.dim(1) != n) throw DimensionError("concat_rows: column counts differ");
    rows += p.dim(0);
    rec = rec || should_record<T>({&p});
  }
  Tensor<T> out = make_result<T>({rows, n}, rec);
  std::vector<StoragePtr<T>> stores;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), out.data().begin() + offset);
    offset += p.size();
    stores.push_back(p.storage());
  }
  if (rec) {
    StoragePtr<T> op = out.storage();
    record(out, [stores, op] {
      std::size_t off = 0;
      for (const auto& s : stores) {
        if (s->requires_grad) {
          for (std::size_t i = 0; i < s->data.size(); ++i) s->grad[i] += op->grad[off + i];
        }
        off += s->data.size();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of no parts");
  const std::size_t m = parts.front().dim(0);
  std::size_t cols = 0;
  bool rec = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_cols");
    if (p.dim(0) != m) throw DimensionError("concat_cols: row counts differ");
    cols += p.dim(1);
    rec = rec || should_record<T>({&p});
  }
  Tensor<T> out = make_result<T>({m, cols}, rec);
  std::vector<StoragePtr<T>> stores;
  std::vector<std::size_t> widths;
  std::size_t offset = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.dim(1);
    for (std::size_t i = 0; i < m; ++i) {
      std::copy_n(p.data().begin() + i * w, w, out.data().begin() + i * cols + offset);
    }
    offset += w;
    stores.push_back(p.storage());
    widths.push_back(w);
  }
  if (rec) {
    StoragePtr<T> op = out.storage();
    record(out, [stores, widths, op, m, cols] {
      std::size_t off = 0;
      for (std::size_t s = 0; s < stores.size(); ++s) {
        const std::size_t w = widths[s];
        if (stores[s]->requires_grad) {
          for (std::size_t i = 0; i < m; ++i) {
            for (std::size_t j = 0; j < w; ++j) stores[s]->grad[i * w + j] += op->grad[i * cols + off + j];
          }
        }
        off += w;
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() == 0 || logits.shape().back() == 0) {
    throw DimensionError("softmax needs a non-empty last axis");
  }
  const std::size_t k = logits.shape().back();
  const std::size_t rows = logits.size() / k;
  const bool rec = should_record<T>({&logits});
  Tensor<T> out = make_result<T>(logits.shape(), rec);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = logits.data().data() + r * k;
    T* y = out.data().data() + r * k;
    T hi = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < k; ++c) {
      if (std::isnan(x[c])) throw NumericError("softmax: NaN logit");
      hi = std::max(hi, x[c]);
    }
    if (!std::isfinite(hi)) throw NumericError("softmax: non-finite logits");
    // Wide accumulation keeps rows over thousands of keys normalized to ~1e-7 in float.
    double total = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      y[c] = std::exp(x[c] - hi);
      total += y[c];
    }
    const double inv = 1.0 / total;
    for (std::size_t c = 0; c < k; ++c) y[c] = static_cast<T>(y[c] * inv);
  }
  if (rec) {
    StoragePtr<T> ap = logits.storage(), op = out.storage();
    record(out, [ap, op, rows, k] {
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = op->data.data() + r * k;
        const T* dy = op->grad.data() + r * k;
        double wide = 0.0;
        for (std::size_t c = 0; c < k; ++c) wide += static_cast<double>(dy[c]) * y[c];
        const T dot = static_cast<T>(wide);
        for (std::size_t c = 0; c < k; ++c) ap->grad[r * k + c] += y[c] * (dy[c] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> weighted_cross_entropy(const Tensor<T>& logits, std::span<const int> targets,
                                 std::span<const T> weights) {
  require_matrix(logits, "weighted_cross_entropy");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (targets.size() != b) {
    throw DimensionError("weighted_cross_entropy: " + std::to_string(targets.size()) +
                         " targets for batch of " + std::to_string(b));
  }
  if (weights.size() != k) {
    throw DimensionError("weighted_cross_entropy: " + std::to_string(weights.size()) +
                         " class weights for " + std::to_string(k) + " classes");
  }
  if (b == 0) throw DimensionError("weighted_cross_entropy: empty batch");
  for (T w : weights) {
    if (!(w > T(0)) || !std::isfinite(w)) {
      throw ParameterError("weighted_cross_entropy: class weights must be finite and > 0");
    }
  }
  for (int y : targets) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw IndexError("weighted_cross_entropy: target " + std::to_string(y) + " outside [0," +
                       std::to_string(k) + ")");
    }
  }

  // Probabilities are kept for the adjoint.
  std::vector<T> probs(b * k);
  T total = T(0);
  for (std::size_t i = 0; i < b; ++i) {
    const T* x = logits.data().data() + i * k;
    T hi = x[0];
    for (std::size_t c = 0; c < k; ++c) {
      if (std::isnan(x[c])) throw NumericError("weighted_cross_entropy: NaN logit");
      hi = std::max(hi, x[c]);
    }
    T z = T(0);
    for (std::size_t c = 0; c < k; ++c) z += std::exp(x[c] - hi);
    const T log_z = hi + std::log(z);
    for (std::size_t c = 0; c < k; ++c) probs[i * k + c] = std::exp(x[c] - log_z);
    const int y = targets[i];
    total += -weights[y] * (x[y] - log_z);
  }
  const bool rec = should_record<T>({&logits});
  Tensor<T> out = make_result<T>({}, rec);
  out[0] = total / static_cast<T>(b);
  if (rec) {
    StoragePtr<T> ap = logits.storage(), op = out.storage();
    std::vector<int> ys(targets.begin(), targets.end());
    std::vector<T> ws(weights.begin(), weights.end());
    record(out, [ap, op, probs = std::move(probs), ys = std::move(ys), ws = std::move(ws), b, k] {
      const T g = op->grad[0] / static_cast<T>(b);
      for (std::size_t i = 0; i < b; ++i) {
        const T wy = ws[ys[i]] * g;
        for (std::size_t c = 0; c < k; ++c) {
          const T onehot = static_cast<int>(c) == ys[i] ? T(1) : T(0);
          ap->grad[i * k + c] += wy * (probs[i * k + c] - onehot);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  require_matrix(a, "layer_norm");
  const std::size_t m = a.dim(0), n = a.dim(1);
  if (gamma.size() != n || beta.size() != n) {
    throw DimensionError("layer_norm: affine parameters do not match width " + std::to_string(n));
  }
  const bool rec = should_record<T>({&a, &gamma, &beta});
  Tensor<T> out = make_result<T>(a.shape(), rec);
  std::vector<T> normalized(m * n);
  std::vector<T> inv_std(m);
  for (std::size_t i = 0; i < m; ++i) {
    const T* x = a.data().data() + i * n;
    T mu = T(0);
    for (std::size_t j = 0; j < n; ++j) mu += x[j];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t j = 0; j < n; ++j) var += (x[j] - mu) * (x[j] - mu);
    var /= static_cast<T>(n);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const T xh = (x[j] - mu) * inv_std[i];
      normalized[i * n + j] = xh;
      out[i * n + j] = gamma[j] * xh + beta[j];
    }
  }
  if (rec) {
    StoragePtr<T> ap = a.storage(), gp = gamma.storage(), bp = beta.storage(), op = out.storage();
    record(out, [ap, gp, bp, op, normalized = std::move(normalized), inv_std = std::move(inv_std), m,
                 n] {
      std::vector<T> dxh(n);
      for (std::size_t i = 0; i < m; ++i) {
        const T* dy = op->grad.data() + i * n;
        const T* xh = normalized.data() + i * n;
        T sum_d = T(0), sum_dx = T(0);
        for (std::size_t j = 0; j < n; ++j) {
          if (gp->requires_grad) gp->grad[j] += dy[j] * xh[j];
          if (bp->requires_grad) bp->grad[j] += dy[j];
          dxh[j] = dy[j] * gp->data[j];
          sum_d += dxh[j];
          sum_dx += dxh[j] * xh[j];
        }
        if (ap->requires_grad) {
          const T scale_ = inv_std[i] / static_cast<T>(n);
          for (std::size_t j = 0; j < n; ++j) {
            ap->grad[i * n + j] +=
                scale_ * (static_cast<T>(n) * dxh[j] - sum_d - xh[j] * sum_dx);
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0) || rate >= 1.0) {
    throw ParameterError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
  }
  if (!training || rate == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(x.size());
  for (T& v : mask) v = rng.uniform() < rate ? T(0) : keep_scale;
  const bool rec = should_record<T>({&x});
  Tensor<T> out = make_result<T>(x.shape(), rec);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
  if (rec) {
    StoragePtr<T> ap = x.storage(), op = out.storage();
    record(out, [ap, op, mask = std::move(mask)] {
      for (std::size_t i = 0; i < mask.size(); ++i) ap->grad[i] += op->grad[i] * mask[i];
    });
  }
  return out;
}

namespace {

struct ConvGeometry {
  std::size_t batch, in_ch, height, width, out_ch, kh, kw, out_h, out_w, stride, padding;
  std::size_t patch() const { return in_ch * kh * kw; }
  std::size_t out_area() const { return out_h * out_w; }
};

template <typename T>
ConvGeometry conv_geometry(const Tensor<T>& input, const Tensor<T>& kernels, Conv2dOptions opt) {
  if (input.rank() != 3 && input.rank() != 4) {
    throw DimensionError("conv2d: input must be [C×H×W] or [B×C×H×W], got " +
                         shape_string(input.shape()));
  }
  if (kernels.rank() != 4) {
    throw DimensionError("conv2d: kernels must be [Cout×Cin×kh×kw], got " +
                         shape_string(kernels.shape()));
  }
  if (opt.stride == 0) throw ParameterError("conv2d: stride must be positive");
  const std::size_t off = input.rank() == 4 ? 1 : 0;
  ConvGeometry g{};
  g.batch = input.rank() == 4 ? input.dim(0) : 1;
  g.in_ch = input.dim(off);
  g.height = input.dim(off + 1);
  g.width = input.dim(off + 2);
  g.out_ch = kernels.dim(0);
  g.kh = kernels.dim(2);
  g.kw = kernels.dim(3);
  g.stride = opt.stride;
  g.padding = opt.padding;
  if (kernels.dim(1) != g.in_ch) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kernels.dim(1)) +
                         " input channels, input has " + std::to_string(g.in_ch));
  }
  if (g.kh > g.height + 2 * g.padding || g.kw > g.width + 2 * g.padding) {
    throw DimensionError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                         " larger than padded input");
  }
  g.out_h = (g.height + 2 * g.padding - g.kh) / g.stride + 1;
  g.out_w = (g.width + 2 * g.padding - g.kw) / g.stride + 1;
  return g;
}

// Unfolds one image [C×H×W] into columns [C·kh·kw × Ho·Wo].
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + ki) - pad;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + kj) - pad;
            const bool inside =
                y >= 0 && x >= 0 && y < static_cast<long>(g.height) && x < static_cast<long>(g.width);
            row[oy * g.out_w + ox] = inside ? image[(c * g.height + y) * g.width + x] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
  const auto pad = static_cast<long>(g.padding);
  for (std::size_t c = 0; c < g.in_ch; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const T* row = col + ((c * g.kh + ki) * g.kw + kj) * g.out_area();
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long y = static_cast<long>(oy * g.stride + ki) - pad;
          if (y < 0 || y >= static_cast<long>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long x = static_cast<long>(ox * g.stride + kj) - pad;
            if (x < 0 || x >= static_cast<long>(g.width)) continue;
            image[(c * g.height + y) * g.width + x] += row[oy * g.out_w + ox];
          }
        }
      }
    }
  }
}

template <typename T>
Tensor<T> conv2d_impl(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>* bias,
                      Conv2dOptions opt) {
  const ConvGeometry g = conv_geometry(input, kernels, opt);
  if (bias && bias->size() != g.out_ch) {
    throw DimensionError("conv2d: bias must hold one value per output channel");
  }
  const bool rec = bias ? should_record<T>({&input, &kernels, bias})
                        : should_record<T>({&input, &kernels});
  Shape out_shape = input.rank() == 4 ? Shape{g.batch, g.out_ch, g.out_h, g.out_w}
                                      : Shape{g.out_ch, g.out_h, g.out_w};
  Tensor<T> out = make_result<T>(std::move(out_shape), rec);

  Buffer<T> col(g.patch() * g.out_area());
  const auto kmat = cmap(kernels.storage()->data, g.out_ch, g.patch());
  const std::size_t in_stride = g.in_ch * g.height * g.width;
  for (std::size_t b = 0; b < g.batch; ++b) {
    im2col(input.data().data() + b * in_stride, g, col.data());
    auto o = map(out.storage()->data, g.batch * g.out_ch, g.out_area())
                 .middleRows(static_cast<Eigen::Index>(b * g.out_ch), static_cast<Eigen::Index>(g.out_ch));
    o.noalias() = kmat * cmap(col, g.patch(), g.out_area());
    if (bias) {
      for (std::size_t c = 0; c < g.out_ch; ++c) o.row(static_cast<Eigen::Index>(c)).array() += (*bias)[c];
    }
  }

  if (rec) {
    StoragePtr<T> ip = input.storage(), kp = kernels.storage(), op = out.storage();
    StoragePtr<T> bp = bias ? bias->storage() : nullptr;
    record(out, [ip, kp, bp, op, g, in_stride] {
      Buffer<T> col(g.patch() * g.out_area());
      Buffer<T> dcol(g.patch() * g.out_area());
      const auto kmat = cmap(kp->data, g.out_ch, g.patch());
      for (std::size_t b = 0; b < g.batch; ++b) {
        const auto dout = cmap(op->grad, g.batch * g.out_ch, g.out_area())
                              .middleRows(static_cast<Eigen::Index>(b * g.out_ch),
                                          static_cast<Eigen::Index>(g.out_ch));
        if (kp->requires_grad) {
          im2col(ip->data.data() + b * in_stride, g, col.data());
          map(kp->grad, g.out_ch, g.patch()).noalias() +=
              dout * cmap(col, g.patch(), g.out_area()).transpose();
        }
        if (bp && bp->requires_grad) {
          for (std::size_t c = 0; c < g.out_ch; ++c) bp->grad[c] += dout.row(static_cast<Eigen::Index>(c)).sum();
        }
        if (ip->requires_grad) {
          map(dcol, g.patch(), g.out_area()).noalias() = kmat.transpose() * dout;
          col2im_add(dcol.data(), g, ip->grad.data() + b * in_stride);
        }
      }
    });
  }
  return out;
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, Conv2dOptions options) {
  return conv2d_impl<T>(input, kernels, nullptr, options);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernels, const Tensor<T>& bias,
                 Conv2dOptions options) {
  return conv2d_impl<T>(input, kernels, &bias, options);
}

template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& input) {
  if (input.rank() != 4) throw DimensionError("avg_pool2 expects [B×C×H×W]");
  const std::size_t planes = input.dim(0) * input.dim(1);
  const std::size_t h = input.dim(2), w = input.dim(3);
  const std::size_t oh = (h + 1) / 2, ow = (w + 1) / 2;
  const bool rec = should_record<T>({&input});
  Tensor<T> out = make_result<T>({input.dim(0), input.dim(1), oh, ow}, rec);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* x = input.data().data() + p * h * w;
    T* y = out.data().data() + p * oh * ow;
    for (std::size_t i = 0; i < oh; ++i) {
      for (std::size_t j = 0; j < ow; ++j) {
        T acc = T(0);
        std::size_t count = 0;
        for (std::size_t di = 0; di < 2; ++di) {
          for (std::size_t dj = 0; dj < 2; ++dj) {
            const std::size_t r = 2 * i + di, c = 2 * j + dj;
            if (r < h && c < w) {
              acc += x[r * w + c];
              ++count;
            }
          }
        }
        y[i * ow + j] = acc / static_cast<T>(count);
      }
    }
  }
  if (rec) {
    StoragePtr<T> ip = input.storage(), op = out.storage();
    record(out, [ip, op, planes, h, w, oh, ow] {
      for (std::size_t p = 0; p < planes; ++p) {
        T* dx = ip->grad.data() + p * h * w;
        const T* dy = op->grad.data() + p * oh * ow;
        for (std::size_t i = 0; i < oh; ++i) {
          for (std::size_t j = 0; j < ow; ++j) {
            const std::size_t rows = std::min<std::size_t>(2, h - 2 * i);
            const std::size_t cols = std::min<std::size_t>(2, w - 2 * j);
            const T share = dy[i * ow + j] / static_cast<T>(rows * cols);
            for (std::size_t di = 0; di < rows; ++di) {
              for (std::size_t dj = 0; dj < cols; ++dj) dx[(2 * i + di) * w + 2 * j + dj] += share;
            }
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) throw DimensionError("global_avg_pool expects [B×C×H×W]");
  const std::size_t b = input.dim(0), c = input.dim(1), area = input.dim(2) * input.dim(3);
  if (area == 0) throw DimensionError("global_avg_pool over an empty plane");
  const bool rec = should_record<T>({&input});
  Tensor<T> out = make_result<T>({b, c}, rec);
  map(out.storage()->data, b * c, 1) = cmap(input.storage()->data, b * c, area).rowwise().mean();
  if (rec) {
    StoragePtr<T> ip = input.storage(), op = out.storage();
    record(out, [ip, op, b, c, area] {
      const T inv = T(1) / static_cast<T>(area);
      for (std::size_t p = 0; p < b * c; ++p) {
        const T g = op->grad[p] * inv;
        for (std::size_t i = 0; i < area; ++i) ip->grad[p * area + i] += g;
      }
    });
  }
  return out;
}

template <typename T>
LstmState<T> lstm_step(const Tensor<T>& input_gates, const LstmState<T>& prev,
                       const Tensor<T>& hidden_weight) {
  require_matrix(input_gates, "lstm_step");
  require_matrix(prev.h, "lstm_step");
  const std::size_t hidden = prev.h.dim(1);
  if (input_gates.dim(1) != 4 * hidden || hidden_weight.rank() != 2 ||
      hidden_weight.dim(0) != hidden || hidden_weight.dim(1) != 4 * hidden ||
      prev.c.shape() != prev.h.shape() || input_gates.dim(0) != prev.h.dim(0)) {
    throw DimensionError("lstm: gate/state shapes are inconsistent");
  }
  const Tensor<T> gates = add(input_gates, matmul(prev.h, hidden_weight));
  const Tensor<T> in = sigmoid(slice_cols(gates, 0, hidden));
  const Tensor<T> forget = sigmoid(slice_cols(gates, hidden, 2 * hidden));
  const Tensor<T> cell = tanh(slice_cols(gates, 2 * hidden, 3 * hidden));
  const Tensor<T> out = sigmoid(slice_cols(gates, 3 * hidden, 4 * hidden));
  LstmState<T> next;
  next.c = add(mul(forget, prev.c), mul(in, cell));
  next.h = mul(out, tanh(next.c));
  return next;
}

template <typename T>
LstmState<T> lstm_cell(const Tensor<T>& x, const LstmState<T>& prev, const LstmParams<T>& params) {
  require_matrix(x, "lstm_cell");
  if (params.input_weight.rank() != 2 || params.input_weight.dim(0) != x.dim(1)) {
    throw DimensionError("lstm_cell: input width " + std::to_string(x.dim(1)) +
                         " does not match input weights " + shape_string(params.input_weight.shape()));
  }
  return lstm_step(add_row(matmul(x, params.input_weight), params.bias), prev, params.hidden_weight);
}

#define DALIGN_INSTANTIATE_OPS(T)                                                                   \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> matmul_transposed<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> transpose<T>(const Tensor<T>&);                                                \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> add_row<T>(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                                 \
  template Tensor<T> add_scalar<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sigmoid<T>(const Tensor<T>&);                                                  \
  template Tensor<T> tanh<T>(const Tensor<T>&);                                                     \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                      \
  template Tensor<T> mean<T>(const Tensor<T>&);                                                     \
  template Tensor<T> mean_rows<T>(const Tensor<T>&);                                                \
  template Tensor<T> reshape<T>(const Tensor<T>&, Shape);                                           \
  template Tensor<T> slice_rows<T>(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> slice_cols<T>(const Tensor<T>&, std::size_t, std::size_t);                     \
  template Tensor<T> concat_rows<T>(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> concat_cols<T>(const std::vector<Tensor<T>>&);                                 \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                                  \
  template Tensor<T> weighted_cross_entropy<T>(const Tensor<T>&, std::span<const int>,              \
                                               std::span<const T>);                                 \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);        \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);                              \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, Conv2dOptions);                  \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Conv2dOptions); \
  template Tensor<T> avg_pool2<T>(const Tensor<T>&);                                                \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                          \
  template LstmState<T> lstm_step<T>(const Tensor<T>&, const LstmState<T>&, const Tensor<T>&);      \
  template LstmState<T> lstm_cell<T>(const Tensor<T>&, const LstmState<T>&, const LstmParams<T>&);

DALIGN_INSTANTIATE_OPS(float)
DALIGN_INSTANTIATE_OPS(double)

#undef DALIGN_INSTANTIATE_OPS

}  // namespace dalign::ops
