#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "dalign/classes.hpp"
#include "dalign/parameters.hpp"
#include "dalign/random.hpp"
#include "dalign/tensor.hpp"

namespace dalign {

struct PerceiverConfig {
  std::size_t input_dim = 10;
  std::size_t latent_dim = 512;
  std::size_t num_latents = 128;
  std::size_t cross_heads = 8;
  std::size_t self_layers = 2;
  std::size_t self_heads = 8;
  std::size_t mlp_hidden = 128;
  std::size_t max_tokens = 9261;
  std::size_t ff_expansion = 2;

  void validate() const;
  // Scalar parameters the encoder allocates for this configuration.
  std::size_t parameter_count() const;
};

// One pre-norm attention block: LayerNorm on the queries' source, multi-head
// scaled dot-product attention, output projection with residual, then a
// LayerNorm + two-layer ReLU feed-forward with residual.
template <typename T>
struct AttentionBlock {
  Tensor<T> norm_gamma, norm_beta;
  Tensor<T> query, key, value;  // [d×d]
  Tensor<T> out_weight, out_bias;
  Tensor<T> ff_norm_gamma, ff_norm_beta;
  Tensor<T> ff1_weight, ff1_bias;  // [d×e·d]
  Tensor<T> ff2_weight, ff2_bias;  // [e·d×d]
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;                // block output [L×d]
  Tensor<T> attended;              // mixed · W_o + b_o, before the residual
  Tensor<T> mixed;                 // heads of A·V concatenated [L×d]
  std::vector<Tensor<T>> weights;  // one [L×N] matrix per head
};

// Queries come from LayerNorm(latents); keys and values from `tokens` [N×d].
// Throws ContractError for N = 0 or when d is not divisible by `heads`.
template <typename T>
AttentionOutput<T> cross_attention(const Tensor<T>& latents, const Tensor<T>& tokens, const AttentionBlock<T>& block,
                                   std::size_t heads);

// Same block with keys [N×d] and values [N×d] supplied directly.
template <typename T>
AttentionOutput<T> attend(const Tensor<T>& latents, const Tensor<T>& keys, const Tensor<T>& values,
                          const AttentionBlock<T>& block, std::size_t heads);

// Token projection, cross-attention into a learned latent array, latent
// self-attention, mean pooling over latents, and an MLP head over 8 classes.
template <typename T>
class PerceiverEncoder {
 public:
  explicit PerceiverEncoder(PerceiverConfig config);

  // Fan-in uniform matrices and latents, zero biases, LayerNorm gain 1.
  void initialize(Rng& rng);
  void mark_initialized() { initialized_ = true; }
  bool initialized() const { return initialized_; }

  const PerceiverConfig& config() const { return config_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  AttentionBlock<T> cross_block() const;
  AttentionBlock<T> self_block(std::size_t layer) const;

  // [N×input_dim] -> [N×latent_dim]. CapacityError unless 1 <= N <= max_tokens.
  Tensor<T> project_tokens(const Tensor<T>& tokens) const;

  // [N×input_dim] -> [latent_dim]. The token projection is folded into the
  // key/value maps, which is exact and avoids an N×d×d product.
  Tensor<T> encode_voxel_grid(const Tensor<T>& tokens) const;

  // Reference path: project_tokens, then cross_attention on the projections.
  Tensor<T> encode_voxel_grid_unfolded(const Tensor<T>& tokens) const;

  // Codes [B×latent_dim] -> logits [B×8].
  Tensor<T> head_logits(const Tensor<T>& codes) const;

  ClassDistribution classify_action(const Tensor<T>& code) const;

  // One token set per frame -> logits [B×8].
  Tensor<T> forward(const std::vector<Tensor<T>>& token_sets) const;

  std::vector<ClassDistribution> predict(const std::vector<Tensor<T>>& token_sets) const;

 private:
  void require_initialized() const;
  // 0 is the cross-attention block, l + 1 the l-th self-attention block.
  AttentionBlock<T> block_at(std::size_t index) const;
  void check_tokens(const Tensor<T>& tokens) const;
  Tensor<T> finish(const Tensor<T>& after_cross) const;

  PerceiverConfig config_;
  ParameterStore<T> params_;
  bool initialized_ = false;
};

}  // namespace dalign
