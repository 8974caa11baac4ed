#pragma once

#include <cstddef>
#include <vector>

#include "dalign/classes.hpp"
#include "dalign/image.hpp"
#include "dalign/parameters.hpp"
#include "dalign/random.hpp"
#include "dalign/tensor.hpp"

namespace dalign {

struct HumanEncoderConfig {
  std::size_t input_size = 220;
  // Output channels of the four backbone stages; the last is the feature width.
  std::vector<std::size_t> stage_widths{32, 64, 128, 512};
  std::size_t lstm_hidden = 64;
  std::size_t lstm_layers = 1;
  std::size_t mlp_hidden = 128;
  double dropout_rate = 0.7;

  std::size_t feature_dim() const { return stage_widths.empty() ? 0 : stage_widths.back(); }
  // Throws ContractError on zero sizes or a bad dropout rate.
  void validate() const;
};

// Bilinear resize (half-pixel centers) to size×size, scaled to [0, 1], then
// normalized per channel with mean 0.5 and std 0.5. Returns [3×size×size].
Tensor<float> preprocess_frame(const RgbImage& rgb, std::size_t size);

// Frame backbone, stacked LSTM and MLP head over the eight classes.
//
// Backbone stage s: conv3×3 (pad 1) + bias, ReLU, 2×2 average pool. A global
// average pool then yields feature_dim values per frame.
template <typename T>
class HumanEncoder {
 public:
  explicit HumanEncoder(HumanEncoderConfig config);

  // Fan-in uniform weights, zero biases, forget-gate bias 1.
  void initialize(Rng& rng);
  // Marks externally assigned parameters (e.g. from a checkpoint) as usable.
  void mark_initialized() { initialized_ = true; }
  bool initialized() const { return initialized_; }

  const HumanEncoderConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  // [B×3×S×S] -> [B×feature_dim].
  Tensor<T> encode_frames(const Tensor<T>& frames) const;
  // [3×S×S] -> [feature_dim].
  Tensor<T> encode_frame(const Tensor<T>& frame) const;

  // [T×feature_dim] -> [T×lstm_hidden], zero initial state, causal.
  Tensor<T> encode_sequence(const Tensor<T>& features) const;

  // [T×lstm_hidden] -> logits [T×8]. Dropout precedes the MLP when training.
  Tensor<T> head_logits(const Tensor<T>& z, bool training, Rng& rng) const;

  // Eval-mode distribution for a single code of length lstm_hidden.
  ClassDistribution classify_intention(const Tensor<T>& z) const;

  // Frames [T×3×S×S] -> logits [T×8].
  Tensor<T> forward(const Tensor<T>& frames, bool training, Rng& rng) const;

  // Eval-mode per-frame distributions for a preprocessed clip.
  std::vector<ClassDistribution> predict(const Tensor<T>& frames) const;

 private:
  void require_initialized() const;

  HumanEncoderConfig config_;
  ParameterStore<T> params_;
  bool initialized_ = false;
};

// Per-row distributions of a logits matrix [T×8].
template <typename T>
std::vector<ClassDistribution> distributions_from_logits(const Tensor<T>& logits);

}  // namespace dalign
