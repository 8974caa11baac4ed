#include "dalign/robot_encoder.hpp"

#include <cmath>

#include "dalign/errors.hpp"
#include "dalign/human_encoder.hpp"
#include "dalign/ops.hpp"

namespace dalign {

void PerceiverConfig::validate() const {
  if (input_dim == 0 || latent_dim == 0 || num_latents == 0 || cross_heads == 0 || self_heads == 0 ||
      mlp_hidden == 0 || max_tokens == 0 || ff_expansion == 0) {
    throw ContractError("perceiver sizes must be positive");
  }
  if (latent_dim % cross_heads != 0 || latent_dim % self_heads != 0) {
    throw ContractError("latent_dim " + std::to_string(latent_dim) + " is not divisible by the head counts");
  }
}

std::size_t PerceiverConfig::parameter_count() const {
  const std::size_t d = latent_dim, e = ff_expansion * latent_dim;
  const std::size_t block = 2 * d + 4 * d * d + d + 2 * d + (d * e + e) + (e * d + d);
  return (input_dim * d + d) + num_latents * d + (1 + self_layers) * block + (d * mlp_hidden + mlp_hidden) +
         (mlp_hidden * kNumClasses + kNumClasses);
}

namespace {

template <typename T>
AttentionOutput<T> attend_normalized(const Tensor<T>& latents, const Tensor<T>& normalized, const Tensor<T>& keys,
                                     const Tensor<T>& values, const AttentionBlock<T>& b, std::size_t heads) {
  const std::size_t d = latents.dim(1);
  if (keys.rank() != 2 || values.rank() != 2 || keys.dim(1) != d || values.dim(1) != d ||
      keys.dim(0) != values.dim(0)) {
    throw DimensionError("attention: keys/values must be [N×" + std::to_string(d) + "]");
  }
  if (keys.dim(0) == 0) throw ContractError("attention over zero keys is undefined");
  if (heads == 0 || d % heads != 0) {
    throw ContractError("attention: width " + std::to_string(d) + " is not divisible by " + std::to_string(heads) +
                        " heads");
  }
  const std::size_t dh = d / heads;
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  const Tensor<T> q = ops::matmul(normalized, b.query);

  AttentionOutput<T> out;
  std::vector<Tensor<T>> head_outputs;
  head_outputs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor<T> qh = ops::slice_cols(q, h * dh, (h + 1) * dh);
    const Tensor<T> kh = heads == 1 ? keys : ops::slice_cols(keys, h * dh, (h + 1) * dh);
    const Tensor<T> vh = heads == 1 ? values : ops::slice_cols(values, h * dh, (h + 1) * dh);
    const Tensor<T> weights = ops::softmax(ops::scale(ops::matmul_transposed(qh, kh), inv_sqrt));
    head_outputs.push_back(ops::matmul(weights, vh));
    out.weights.push_back(weights);
  }
  out.mixed = heads == 1 ? head_outputs.front() : ops::concat_cols(head_outputs);
  out.attended = linear(out.mixed, b.out_weight, b.out_bias);
  const Tensor<T> x = ops::add(latents, out.attended);
  const Tensor<T> xn = ops::layer_norm(x, b.ff_norm_gamma, b.ff_norm_beta);
  const Tensor<T> ff = linear(ops::relu(linear(xn, b.ff1_weight, b.ff1_bias)), b.ff2_weight, b.ff2_bias);
  out.output = ops::add(x, ff);
  return out;
}

template <typename T>
void check_latents(const Tensor<T>& latents, const AttentionBlock<T>& b) {
  if (latents.rank() != 2 || latents.dim(1) != b.query.dim(0)) {
    throw DimensionError("attention: latents must be [L×" + std::to_string(b.query.dim(0)) + "], got " +
                         shape_string(latents.shape()));
  }
}

std::string block_prefix(std::size_t layer) {
  return layer == 0 ? std::string("robot.cross.") : "robot.self" + std::to_string(layer - 1) + ".";
}

}  // namespace

template <typename T>
AttentionOutput<T> attend(const Tensor<T>& latents, const Tensor<T>& keys, const Tensor<T>& values,
                          const AttentionBlock<T>& block, std::size_t heads) {
  check_latents(latents, block);
  const Tensor<T> normalized = ops::layer_norm(latents, block.norm_gamma, block.norm_beta);
  return attend_normalized(latents, normalized, keys, values, block, heads);
}

template <typename T>
AttentionOutput<T> cross_attention(const Tensor<T>& latents, const Tensor<T>& tokens, const AttentionBlock<T>& block,
                                   std::size_t heads) {
  check_latents(latents, block);
  if (tokens.rank() != 2 || tokens.dim(1) != block.key.dim(0)) {
    throw DimensionError("cross_attention: tokens must be [N×" + std::to_string(block.key.dim(0)) + "], got " +
                         shape_string(tokens.shape()));
  }
  if (tokens.dim(0) == 0) throw ContractError("cross_attention over zero tokens is undefined");
  return attend(latents, ops::matmul(tokens, block.key), ops::matmul(tokens, block.value), block, heads);
}

template <typename T>
PerceiverEncoder<T>::PerceiverEncoder(PerceiverConfig config) : config_(config) {
  config_.validate();
  const std::size_t d = config_.latent_dim, e = config_.ff_expansion * d;
  params_.add("robot.proj.weight", {config_.input_dim, d});
  params_.add("robot.proj.bias", {d});
  params_.add("robot.latents", {config_.num_latents, d});
  for (std::size_t layer = 0; layer <= config_.self_layers; ++layer) {
    const std::string p = block_prefix(layer);
    params_.add(p + "norm.gamma", {d});
    params_.add(p + "norm.beta", {d});
    params_.add(p + "query", {d, d});
    params_.add(p + "key", {d, d});
    params_.add(p + "value", {d, d});
    params_.add(p + "out.weight", {d, d});
    params_.add(p + "out.bias", {d});
    params_.add(p + "ff_norm.gamma", {d});
    params_.add(p + "ff_norm.beta", {d});
    params_.add(p + "ff1.weight", {d, e});
    params_.add(p + "ff1.bias", {e});
    params_.add(p + "ff2.weight", {e, d});
    params_.add(p + "ff2.bias", {d});
  }
  params_.add("robot.head.fc1.weight", {d, config_.mlp_hidden});
  params_.add("robot.head.fc1.bias", {config_.mlp_hidden});
  params_.add("robot.head.fc2.weight", {config_.mlp_hidden, kNumClasses});
  params_.add("robot.head.fc2.bias", {kNumClasses});
}

template <typename T>
void PerceiverEncoder<T>::initialize(Rng& rng) {
  for (auto& [name, tensor] : params_) {
    if (name.ends_with(".gamma")) {
      fill(tensor, T(1));
    } else if (tensor.rank() == 1) {
      fill(tensor, T(0));
    } else if (name == "robot.latents") {
      init_fan_in_uniform(tensor, tensor.dim(1), rng);
    } else {
      init_fan_in_uniform(tensor, tensor.dim(0), rng);
    }
  }
  initialized_ = true;
}

template <typename T>
void PerceiverEncoder<T>::require_initialized() const {
  if (!initialized_) throw ContractError("perceiver parameters are not initialized");
}

template <typename T>
AttentionBlock<T> PerceiverEncoder<T>::cross_block() const {
  return block_at(0);
}

template <typename T>
AttentionBlock<T> PerceiverEncoder<T>::self_block(std::size_t layer) const {
  if (layer >= config_.self_layers) throw IndexError("no self-attention layer " + std::to_string(layer));
  return block_at(layer + 1);
}

template <typename T>
AttentionBlock<T> PerceiverEncoder<T>::block_at(std::size_t index) const {
  const std::string p = block_prefix(index);
  auto g = [&](const char* n) { return params_.get(p + n); };
  return {g("norm.gamma"), g("norm.beta"), g("query"),        g("key"),          g("value"),
          g("out.weight"), g("out.bias"),  g("ff_norm.gamma"), g("ff_norm.beta"), g("ff1.weight"),
          g("ff1.bias"),   g("ff2.weight"), g("ff2.bias")};
}

template <typename T>
void PerceiverEncoder<T>::check_tokens(const Tensor<T>& tokens) const {
  if (tokens.rank() != 2 || tokens.dim(1) != config_.input_dim) {
    throw DimensionError("perceiver tokens must be [N×" + std::to_string(config_.input_dim) + "], got " +
                         shape_string(tokens.shape()));
  }
  const std::size_t n = tokens.dim(0);
  if (n == 0 || n > config_.max_tokens) {
    throw CapacityError("perceiver accepts 1.." + std::to_string(config_.max_tokens) + " tokens, got " +
                        std::to_string(n));
  }
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::project_tokens(const Tensor<T>& tokens) const {
  require_initialized();
  check_tokens(tokens);
  return linear(tokens, params_.get("robot.proj.weight"), params_.get("robot.proj.bias"));
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::finish(const Tensor<T>& after_cross) const {
  Tensor<T> x = after_cross;
  for (std::size_t l = 0; l < config_.self_layers; ++l) {
    const AttentionBlock<T> b = self_block(l);
    const Tensor<T> xn = ops::layer_norm(x, b.norm_gamma, b.norm_beta);
    x = attend_normalized(x, xn, ops::matmul(xn, b.key), ops::matmul(xn, b.value), b, config_.self_heads).output;
  }
  return ops::reshape(ops::mean_rows(x), {config_.latent_dim});
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::encode_voxel_grid(const Tensor<T>& tokens) const {
  require_initialized();
  check_tokens(tokens);
  const AttentionBlock<T> b = cross_block();
  const Tensor<T>& wp = params_.get("robot.proj.weight");
  const Tensor<T> bp = ops::reshape(params_.get("robot.proj.bias"), {1, config_.latent_dim});
  // (X·Wp + bp)·Wk = X·(Wp·Wk) + bp·Wk, likewise for the values.
  auto fold = [&](const Tensor<T>& w) {
    const Tensor<T> bias = ops::reshape(ops::matmul(bp, w), {config_.latent_dim});
    return ops::add_row(ops::matmul(tokens, ops::matmul(wp, w)), bias);
  };
  const Tensor<T>& latents = params_.get("robot.latents");
  return finish(attend(latents, fold(b.key), fold(b.value), b, config_.cross_heads).output);
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::encode_voxel_grid_unfolded(const Tensor<T>& tokens) const {
  const Tensor<T> projected = project_tokens(tokens);
  return finish(cross_attention(params_.get("robot.latents"), projected, cross_block(), config_.cross_heads).output);
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::head_logits(const Tensor<T>& codes) const {
  require_initialized();
  if (codes.rank() != 2 || codes.dim(1) != config_.latent_dim) {
    throw DimensionError("action head expects [B×" + std::to_string(config_.latent_dim) + "], got " +
                         shape_string(codes.shape()));
  }
  codes.check_finite("action head input");
  const Tensor<T> hidden =
      ops::relu(linear(codes, params_.get("robot.head.fc1.weight"), params_.get("robot.head.fc1.bias")));
  return linear(hidden, params_.get("robot.head.fc2.weight"), params_.get("robot.head.fc2.bias"));
}

template <typename T>
ClassDistribution PerceiverEncoder<T>::classify_action(const Tensor<T>& code) const {
  if (code.size() != config_.latent_dim) {
    throw DimensionError("classify_action expects a code of length " + std::to_string(config_.latent_dim));
  }
  return distributions_from_logits(head_logits(ops::reshape(code, {1, config_.latent_dim}))).front();
}

template <typename T>
Tensor<T> PerceiverEncoder<T>::forward(const std::vector<Tensor<T>>& token_sets) const {
  if (token_sets.empty()) throw ContractError("perceiver forward needs at least one token set");
  std::vector<Tensor<T>> codes;
  codes.reserve(token_sets.size());
  for (const Tensor<T>& tokens : token_sets) {
    codes.push_back(ops::reshape(encode_voxel_grid(tokens), {1, config_.latent_dim}));
  }
  return head_logits(codes.size() == 1 ? codes.front() : ops::concat_rows(codes));
}

template <typename T>
std::vector<ClassDistribution> PerceiverEncoder<T>::predict(const std::vector<Tensor<T>>& token_sets) const {
  return distributions_from_logits(forward(token_sets));
}

template struct AttentionOutput<float>;
template struct AttentionOutput<double>;
template AttentionOutput<float> attend<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&,
                                              const AttentionBlock<float>&, std::size_t);
template AttentionOutput<double> attend<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&,
                                                const AttentionBlock<double>&, std::size_t);
template AttentionOutput<float> cross_attention<float>(const Tensor<float>&, const Tensor<float>&,
                                                       const AttentionBlock<float>&, std::size_t);
template AttentionOutput<double> cross_attention<double>(const Tensor<double>&, const Tensor<double>&,
                                                         const AttentionBlock<double>&, std::size_t);
template class PerceiverEncoder<float>;
template class PerceiverEncoder<double>;

}  // namespace dalign
