#include "dalign/gradient_suite.hpp"

#include <chrono>
#include <functional>

#include "dalign/alignment.hpp"
#include "dalign/errors.hpp"
#include "dalign/human_encoder.hpp"
#include "dalign/ops.hpp"
#include "dalign/robot_encoder.hpp"

namespace dalign {

namespace {

using Loss = std::function<Tensor<double>()>;

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Contracts an arbitrary output against fixed random weights to get a scalar.
Tensor<double> contract(const Tensor<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor<double> probe = random_tensor(out.shape(), rng);
  return ops::sum(ops::mul(out, probe));
}

class Suite {
 public:
  void run(const std::string& module, const std::string& name, const Loss& loss, std::vector<NamedTensor> inputs,
           const GradCheckOptions& options = {}) {
    const auto start = std::chrono::steady_clock::now();
    GradientSuiteEntry e{module, name, finite_difference_check(loss, std::move(inputs), options), 0.0};
    e.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    entries.push_back(std::move(e));
  }
  std::vector<GradientSuiteEntry> entries;
};

void autodiff_checks(Suite& s) {
  const std::string m = "autodiff";
  Rng rng(10);
  Tensor<double> a = random_tensor({3, 4}, rng), b = random_tensor({4, 5}, rng), bt = random_tensor({5, 4}, rng);
  Tensor<double> a2 = random_tensor({3, 4}, rng), bias = random_tensor({4}, rng);
  s.run(m, "matmul", [&] { return contract(ops::matmul(a, b)); }, {{"a", a}, {"b", b}});
  s.run(m, "matmul_transposed", [&] { return contract(ops::matmul_transposed(a, bt)); }, {{"a", a}, {"bt", bt}});
  s.run(m, "transpose", [&] { return contract(ops::transpose(a)); }, {{"a", a}});
  s.run(m, "add", [&] { return contract(ops::add(a, a2)); }, {{"a", a}, {"b", a2}});
  s.run(m, "sub", [&] { return contract(ops::sub(a, a2)); }, {{"a", a}, {"b", a2}});
  s.run(m, "mul", [&] { return contract(ops::mul(a, a2)); }, {{"a", a}, {"b", a2}});
  s.run(m, "add_row", [&] { return contract(ops::add_row(a, bias)); }, {{"a", a}, {"bias", bias}});
  s.run(m, "scale", [&] { return contract(ops::scale(a, -1.7)); }, {{"a", a}});
  s.run(m, "add_scalar", [&] { return contract(ops::add_scalar(a, 0.3)); }, {{"a", a}});
  s.run(m, "relu", [&] { return contract(ops::relu(a)); }, {{"a", a}});
  s.run(m, "sigmoid", [&] { return contract(ops::sigmoid(a)); }, {{"a", a}});
  s.run(m, "tanh", [&] { return contract(ops::tanh(a)); }, {{"a", a}});
  s.run(m, "sum", [&] { return ops::sum(ops::mul(a, a)); }, {{"a", a}});
  s.run(m, "mean", [&] { return ops::mean(ops::mul(a, a)); }, {{"a", a}});
  s.run(m, "mean_rows", [&] { return contract(ops::mean_rows(a)); }, {{"a", a}});
  s.run(m, "reshape", [&] { return contract(ops::reshape(a, {2, 6})); }, {{"a", a}});
  s.run(m, "slice_rows", [&] { return contract(ops::slice_rows(a, 1, 3)); }, {{"a", a}});
  s.run(m, "slice_cols", [&] { return contract(ops::slice_cols(a, 1, 3)); }, {{"a", a}});
  Tensor<double> rows = random_tensor({2, 4}, rng), cols = random_tensor({3, 2}, rng);
  s.run(m, "concat_rows", [&] { return contract(ops::concat_rows<double>({a, rows})); }, {{"a", a}, {"b", rows}});
  s.run(m, "concat_cols", [&] { return contract(ops::concat_cols<double>({a, cols})); }, {{"a", a}, {"b", cols}});

  Tensor<double> logits = random_tensor({3, 8}, rng);
  Tensor<double> gamma = random_tensor({8}, rng), beta = random_tensor({8}, rng);
  const std::vector<int> targets{2, 7, 0};
  const std::vector<double> weights{0.5, 1, 2, 1, 1, 1.5, 1, 4};
  s.run(m, "softmax", [&] { return contract(ops::softmax(logits)); }, {{"logits", logits}});
  s.run(m, "weighted_cross_entropy", [&] { return ops::weighted_cross_entropy<double>(logits, targets, weights); },
        {{"logits", logits}});
  s.run(m, "layer_norm", [&] { return contract(ops::layer_norm(logits, gamma, beta)); },
        {{"x", logits}, {"gamma", gamma}, {"beta", beta}});
  s.run(m, "dropout",
        [&] {
          Rng mask(5);
          return contract(ops::dropout(logits, 0.4, true, mask));
        },
        {{"x", logits}});

  Tensor<double> image = random_tensor({2, 3, 5, 7}, rng), kernels = random_tensor({4, 3, 3, 3}, rng);
  Tensor<double> kbias = random_tensor({4}, rng);
  s.run(m, "conv2d", [&] { return contract(ops::conv2d(image, kernels, kbias, {1, 1})); },
        {{"input", image}, {"kernels", kernels}, {"bias", kbias}});
  s.run(m, "conv2d_strided", [&] { return contract(ops::conv2d(image, kernels, {2, 0})); },
        {{"input", image}, {"kernels", kernels}});
  s.run(m, "avg_pool2", [&] { return contract(ops::avg_pool2(image)); }, {{"input", image}});
  s.run(m, "global_avg_pool", [&] { return contract(ops::global_avg_pool(image)); }, {{"input", image}});

  ops::LstmParams<double> p{random_tensor({3, 8}, rng), random_tensor({2, 8}, rng), random_tensor({8}, rng)};
  Tensor<double> x = random_tensor({4, 3}, rng), h = random_tensor({4, 2}, rng), c = random_tensor({4, 2}, rng);
  s.run(m, "lstm_cell",
        [&] {
          const auto next = ops::lstm_cell(x, {h, c}, p);
          return ops::add(contract(next.h, 1), contract(next.c, 2));
        },
        {{"x", x}, {"h", h}, {"c", c}, {"Wx", p.input_weight}, {"Wh", p.hidden_weight}, {"b", p.bias}});
}

void human_checks(Suite& s) {
  HumanEncoderConfig cfg;
  cfg.input_size = 8;
  cfg.stage_widths = {3, 4, 4, 512};
  cfg.lstm_hidden = 5;
  cfg.mlp_hidden = 6;
  HumanEncoder<double> enc(cfg);
  Rng rng(70);
  enc.initialize(rng);
  // Nonzero biases so every path carries gradient.
  for (auto& [name, t] : enc.params()) {
    if (t.rank() == 1) {
      for (double& v : t.data()) v = rng.uniform(-0.5, 0.5);
    }
  }
  const Tensor<double> clip = random_tensor({2, 3, 8, 8}, rng);
  const std::vector<int> targets{1, 6};
  const std::vector<double> weights{1, 2, 1, 1, 0.5, 1, 1.5, 1};
  std::vector<NamedTensor> inputs;
  for (auto& [name, t] : enc.params()) inputs.push_back({name, t});
  s.run("human", "human_branch",
        [&] {
          Rng mask(3);
          return ops::weighted_cross_entropy<double>(enc.forward(clip, true, mask), targets, weights);
        },
        inputs);
}

void robot_checks(Suite& s) {
  PerceiverConfig cfg;
  cfg.latent_dim = 8;
  cfg.num_latents = 4;
  cfg.cross_heads = 2;
  cfg.self_heads = 2;
  cfg.self_layers = 1;
  cfg.mlp_hidden = 6;
  PerceiverEncoder<double> enc(cfg);
  Rng rng(100);
  enc.initialize(rng);
  for (auto& [name, t] : enc.params()) {
    if (t.rank() == 1) {
      for (double& v : t.data()) v += rng.uniform(-0.3, 0.3);
    }
  }
  const std::vector<Tensor<double>> sets{random_tensor({27, 10}, rng), random_tensor({27, 10}, rng)};
  const std::vector<int> targets{2, 5};
  const std::vector<double> weights{1, 1, 2, 1, 1, 0.5, 1, 1};
  std::vector<NamedTensor> inputs;
  for (auto& [name, t] : enc.params()) inputs.push_back({name, t});
  s.run("robot", "robot_branch",
        [&] { return ops::weighted_cross_entropy<double>(enc.forward(sets), targets, weights); }, inputs);

  const AttentionBlock<double> block = enc.cross_block();
  Tensor<double> latents = random_tensor({4, 8}, rng), tokens = random_tensor({5, 8}, rng);
  s.run("robot", "cross_attention", [&] { return contract(cross_attention(latents, tokens, block, 2).output); },
        {{"latents", latents}, {"tokens", tokens}});
}

void alignment_checks(Suite& s) {
  Rng rng(113);
  Tensor<double> hl = random_tensor({6, 8}, rng, -2, 2), rl = random_tensor({6, 8}, rng, -2, 2);
  ClassCorrespondence corr = ClassCorrespondence::identity();
  corr.allow(5, 6).allow(0, 7);
  s.run("alignment", "soft_alignment_loss",
        [&] { return soft_alignment_loss(ops::softmax(hl), ops::softmax(rl), corr); },
        {{"human_logits", hl}, {"robot_logits", rl}});
}

}  // namespace

const std::vector<std::string>& gradient_suite_modules() {
  static const std::vector<std::string> names{"autodiff", "human", "robot", "alignment"};
  return names;
}

std::vector<GradientSuiteEntry> run_gradient_suite(const std::string& module) {
  Suite s;
  bool known = module == "all";
  for (const auto& name : gradient_suite_modules()) known = known || name == module;
  if (!known) throw ContractError("unknown gradient-check module '" + module + "'");
  if (module == "all" || module == "autodiff") autodiff_checks(s);
  if (module == "all" || module == "human") human_checks(s);
  if (module == "all" || module == "robot") robot_checks(s);
  if (module == "all" || module == "alignment") alignment_checks(s);
  return std::move(s.entries);
}

}  // namespace dalign
