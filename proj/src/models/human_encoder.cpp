#include "dalign/human_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dalign/errors.hpp"
#include "dalign/ops.hpp"

namespace dalign {

void HumanEncoderConfig::validate() const {
  if (input_size == 0 || lstm_hidden == 0 || lstm_layers == 0 || mlp_hidden == 0) {
    throw ContractError("human encoder sizes must be positive");
  }
  if (stage_widths.size() != 4) throw ContractError("human backbone needs exactly 4 stage widths");
  if (std::find(stage_widths.begin(), stage_widths.end(), 0u) != stage_widths.end()) {
    throw ContractError("human backbone stage widths must be positive");
  }
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) {
    throw ContractError("dropout rate must lie in [0, 1)");
  }
}

Tensor<float> preprocess_frame(const RgbImage& rgb, std::size_t size) {
  if (rgb.width == 0 || rgb.height == 0 || rgb.pixels.size() != rgb.width * rgb.height * 3) {
    throw DimensionError("preprocess_frame: empty or malformed image");
  }
  if (size == 0) throw DimensionError("preprocess_frame: target size must be positive");
  Tensor<float> out({3, size, size});
  float* dst = out.data().data();
  const double sx = static_cast<double>(rgb.width) / static_cast<double>(size);
  const double sy = static_cast<double>(rgb.height) / static_cast<double>(size);

  struct Tap {
    std::size_t lo, hi;
    double frac;
  };
  auto taps = [](std::size_t n_out, double scale, std::size_t n_in) {
    std::vector<Tap> t(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      double src = (static_cast<double>(i) + 0.5) * scale - 0.5;
      src = std::clamp(src, 0.0, static_cast<double>(n_in - 1));
      const auto lo = static_cast<std::size_t>(std::floor(src));
      t[i] = {lo, std::min(lo + 1, n_in - 1), src - static_cast<double>(lo)};
    }
    return t;
  };
  const std::vector<Tap> xs = taps(size, sx, rgb.width);
  const std::vector<Tap> ys = taps(size, sy, rgb.height);

  for (std::size_t y = 0; y < size; ++y) {
    const Tap& ty = ys[y];
    for (std::size_t x = 0; x < size; ++x) {
      const Tap& tx = xs[x];
      for (std::size_t c = 0; c < 3; ++c) {
        const double top = rgb.at(tx.lo, ty.lo, c) * (1.0 - tx.frac) + rgb.at(tx.hi, ty.lo, c) * tx.frac;
        const double bottom = rgb.at(tx.lo, ty.hi, c) * (1.0 - tx.frac) + rgb.at(tx.hi, ty.hi, c) * tx.frac;
        const double value = (top * (1.0 - ty.frac) + bottom * ty.frac) / 255.0;
        dst[(c * size + y) * size + x] = static_cast<float>((value - 0.5) / 0.5);
      }
    }
  }
  return out;
}

namespace {

std::string stage_name(std::size_t s, const char* what) {
  return "human.backbone.stage" + std::to_string(s) + "." + what;
}
std::string lstm_name(std::size_t l, const char* what) {
  return "human.lstm" + std::to_string(l) + "." + what;
}

}  // namespace

template <typename T>
HumanEncoder<T>::HumanEncoder(HumanEncoderConfig config) : config_(std::move(config)) {
  config_.validate();
  std::size_t in = 3;
  for (std::size_t s = 0; s < config_.stage_widths.size(); ++s) {
    const std::size_t out = config_.stage_widths[s];
    params_.add(stage_name(s, "weight"), {out, in, 3, 3});
    params_.add(stage_name(s, "bias"), {out});
    in = out;
  }
  std::size_t width = config_.feature_dim();
  const std::size_t gates = 4 * config_.lstm_hidden;
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    params_.add(lstm_name(l, "input_weight"), {width, gates});
    params_.add(lstm_name(l, "hidden_weight"), {config_.lstm_hidden, gates});
    params_.add(lstm_name(l, "bias"), {gates});
    width = config_.lstm_hidden;
  }
  params_.add("human.head.fc1.weight", {config_.lstm_hidden, config_.mlp_hidden});
  params_.add("human.head.fc1.bias", {config_.mlp_hidden});
  params_.add("human.head.fc2.weight", {config_.mlp_hidden, kNumClasses});
  params_.add("human.head.fc2.bias", {kNumClasses});
}

template <typename T>
void HumanEncoder<T>::initialize(Rng& rng) {
  for (auto& [name, tensor] : params_) {
    if (tensor.rank() == 1) {
      fill(tensor, T(0));
    } else if (tensor.rank() == 4) {
      init_fan_in_uniform(tensor, tensor.dim(1) * 9, rng);
    } else {
      init_fan_in_uniform(tensor, tensor.dim(0), rng);
    }
  }
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    Tensor<T>& b = params_.get(lstm_name(l, "bias"));
    for (std::size_t i = config_.lstm_hidden; i < 2 * config_.lstm_hidden; ++i) b[i] = T(1);
  }
  initialized_ = true;
}

template <typename T>
void HumanEncoder<T>::require_initialized() const {
  if (!initialized_) throw ContractError("human encoder parameters are not initialized");
}

template <typename T>
Tensor<T> HumanEncoder<T>::encode_frames(const Tensor<T>& frames) const {
  require_initialized();
  if (frames.rank() != 4 || frames.dim(1) != 3) {
    throw DimensionError("encode_frames expects [B×3×S×S], got " + shape_string(frames.shape()));
  }
  Tensor<T> x = frames;
  for (std::size_t s = 0; s < config_.stage_widths.size(); ++s) {
    x = ops::conv2d(x, params_.get(stage_name(s, "weight")), params_.get(stage_name(s, "bias")), {1, 1});
    x = ops::avg_pool2(ops::relu(x));
  }
  return ops::global_avg_pool(x);
}

template <typename T>
Tensor<T> HumanEncoder<T>::encode_frame(const Tensor<T>& frame) const {
  if (frame.rank() != 3) throw DimensionError("encode_frame expects [3×S×S]");
  const Tensor<T> batch = ops::reshape(frame, {1, frame.dim(0), frame.dim(1), frame.dim(2)});
  return ops::reshape(encode_frames(batch), {config_.feature_dim()});
}

template <typename T>
Tensor<T> HumanEncoder<T>::encode_sequence(const Tensor<T>& features) const {
  require_initialized();
  if (features.rank() != 2 || features.dim(1) != config_.feature_dim()) {
    throw DimensionError("encode_sequence expects [T×" + std::to_string(config_.feature_dim()) + "], got " +
                         shape_string(features.shape()));
  }
  const std::size_t steps = features.dim(0);
  if (steps == 0) throw DimensionError("encode_sequence needs at least one frame");
  const std::size_t h = config_.lstm_hidden;
  Tensor<T> x = features;
  for (std::size_t l = 0; l < config_.lstm_layers; ++l) {
    // Input projections for every step at once; only the recurrence is sequential.
    const Tensor<T> gates = ops::add_row(ops::matmul(x, params_.get(lstm_name(l, "input_weight"))),
                                         params_.get(lstm_name(l, "bias")));
    const Tensor<T>& wh = params_.get(lstm_name(l, "hidden_weight"));
    ops::LstmState<T> state{Tensor<T>({1, h}), Tensor<T>({1, h})};
    std::vector<Tensor<T>> outputs;
    outputs.reserve(steps);
    for (std::size_t t = 0; t < steps; ++t) {
      state = ops::lstm_step(ops::slice_rows(gates, t, t + 1), state, wh);
      outputs.push_back(state.h);
    }
    x = ops::concat_rows(outputs);
  }
  return x;
}

template <typename T>
Tensor<T> HumanEncoder<T>::head_logits(const Tensor<T>& z, bool training, Rng& rng) const {
  require_initialized();
  if (z.rank() != 2 || z.dim(1) != config_.lstm_hidden) {
    throw DimensionError("intention head expects [T×" + std::to_string(config_.lstm_hidden) + "], got " +
                         shape_string(z.shape()));
  }
  z.check_finite("intention head input");
  const Tensor<T> dropped = ops::dropout(z, config_.dropout_rate, training, rng);
  const Tensor<T> hidden =
      ops::relu(linear(dropped, params_.get("human.head.fc1.weight"), params_.get("human.head.fc1.bias")));
  return linear(hidden, params_.get("human.head.fc2.weight"), params_.get("human.head.fc2.bias"));
}

template <typename T>
ClassDistribution HumanEncoder<T>::classify_intention(const Tensor<T>& z) const {
  if (z.size() != config_.lstm_hidden) {
    throw DimensionError("classify_intention expects a code of length " + std::to_string(config_.lstm_hidden));
  }
  Rng unused(0);
  const Tensor<T> logits = head_logits(ops::reshape(z, {1, config_.lstm_hidden}), false, unused);
  return distributions_from_logits(logits).front();
}

template <typename T>
Tensor<T> HumanEncoder<T>::forward(const Tensor<T>& frames, bool training, Rng& rng) const {
  return head_logits(encode_sequence(encode_frames(frames)), training, rng);
}

template <typename T>
std::vector<ClassDistribution> HumanEncoder<T>::predict(const Tensor<T>& frames) const {
  Rng unused(0);
  return distributions_from_logits(forward(frames, false, unused));
}

template <typename T>
std::vector<ClassDistribution> distributions_from_logits(const Tensor<T>& logits) {
  if (logits.rank() != 2 || logits.dim(1) != kNumClasses) {
    throw DimensionError("expected logits [T×8], got " + shape_string(logits.shape()));
  }
  // Reported distributions are normalized in double regardless of T.
  const Tensor<double> probs = ops::softmax(logits.template cast<double>());
  std::vector<ClassDistribution> out;
  out.reserve(logits.dim(0));
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    std::array<double, kNumClasses> row{};
    for (std::size_t c = 0; c < kNumClasses; ++c) row[c] = probs.at(r, c);
    out.push_back(ClassDistribution::from(std::span<const double>(row)));
  }
  return out;
}

template class HumanEncoder<float>;
template class HumanEncoder<double>;
template std::vector<ClassDistribution> distributions_from_logits<float>(const Tensor<float>&);
template std::vector<ClassDistribution> distributions_from_logits<double>(const Tensor<double>&);

}  // namespace dalign
