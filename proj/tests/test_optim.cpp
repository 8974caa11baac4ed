#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "dalign/adam.hpp"
#include "dalign/errors.hpp"
#include "dalign/ops.hpp"
#include "test_support.hpp"

namespace dalign {
namespace {

// Straight transcription of the textbook update, kept separate from the library.
struct ReferenceAdam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;

  void step(std::vector<double>& p, const std::vector<double>& g) {
    if (m.empty()) m.assign(p.size(), 0.0), v.assign(p.size(), 0.0);
    ++t;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      p[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<double> p{0.5, -1.5, 2.0};
  const std::vector<double> before = p, g(3, 0.0);
  AdamMoments<double> m;
  adam_update<double>(p, g, m, {}, 1);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  for (double g : {1e-3, 0.25, -4.0, 300.0}) {
    std::vector<double> p{1.0};
    AdamMoments<double> m;
    AdamHyperParams hp;
    adam_update<double>(p, std::vector<double>{g}, m, hp, 1);
    // m̂ = g and v̂ = g², so the step is lr·|g|/(|g|+eps).
    const double expected = hp.learning_rate * std::abs(g) / (std::abs(g) + hp.epsilon);
    EXPECT_NEAR(1.0 - p[0], std::copysign(expected, g), 1e-15);
    EXPECT_NEAR(std::abs(1.0 - p[0]), hp.learning_rate, 1e-8);
  }
}

TEST(Adam, ConstantGradientDoesNotGrowStep) {
  std::vector<double> p{0.0};
  AdamMoments<double> m;
  AdamHyperParams hp{1e-3};
  adam_update<double>(p, std::vector<double>{0.7}, m, hp, 1);
  const double first = std::abs(p[0]);
  const double after_first = p[0];
  adam_update<double>(p, std::vector<double>{0.7}, m, hp, 2);
  const double second = std::abs(p[0] - after_first);
  EXPECT_LE(second, first + 1e-6);
}

TEST(Adam, MatchesReferenceOverManySteps) {
  Rng rng(21);
  const AdamHyperParams hp{3e-3, 0.85, 0.99, 1e-7};
  std::vector<double> p(17), ref_p;
  for (double& v : p) v = rng.uniform(-1, 1);
  ref_p = p;
  AdamMoments<double> m;
  ReferenceAdam ref{hp.learning_rate, hp.beta1, hp.beta2, hp.epsilon, {}, {}};
  for (std::uint64_t step = 1; step <= 50; ++step) {
    std::vector<double> g(p.size());
    for (double& v : g) v = rng.uniform(-2, 2);
    adam_update<double>(p, g, m, hp, step);
    ref.step(ref_p, g);
  }
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_NEAR(p[i], ref_p[i], 1e-12);
}

TEST(Adam, ShapeMismatchAndBadStep) {
  std::vector<double> p(3, 0.0);
  AdamMoments<double> m;
  EXPECT_THROW(adam_update<double>(p, std::vector<double>(2, 1.0), m, {}, 1), DimensionError);
  EXPECT_THROW(adam_update<double>(p, std::vector<double>(3, 1.0), m, {}, 0), ContractError);
  AdamMoments<double> wrong{std::vector<double>(4), std::vector<double>(4)};
  EXPECT_THROW(adam_update<double>(p, std::vector<double>(3, 1.0), wrong, {}, 1), DimensionError);
}

TEST(AdamOptimizer, StepCounterAndMomentShapes) {
  ParameterStore<float> store;
  store.add("w", {3, 2});
  store.add("b", {2});
  AdamOptimizer<float> opt(AdamHyperParams{});
  for (int i = 1; i <= 3; ++i) {
    opt.step(store);
    EXPECT_EQ(opt.step_count(), static_cast<std::uint64_t>(i));
  }
  ASSERT_EQ(opt.moments().size(), 2u);
  EXPECT_EQ(opt.moments()[0].first.size(), 6u);
  EXPECT_EQ(opt.moments()[1].second.size(), 2u);

  ParameterStore<float> other;
  other.add("w", {3, 2});
  EXPECT_THROW(opt.step(other), DimensionError);
}

TEST(AdamOptimizer, MinimizesQuadratic) {
  ParameterStore<double> store;
  Tensor<double>& x = store.add("x", {4});
  for (std::size_t i = 0; i < 4; ++i) x[i] = static_cast<double>(i) - 1.5;
  AdamOptimizer<double> opt(AdamHyperParams{0.05});
  for (int it = 0; it < 500; ++it) {
    store.zero_grad();
    Tape<double> tape;
    const Tensor<double> loss = ops::sum(ops::mul(x, x));
    tape.backward(loss);
    opt.step(store);
  }
  for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(x[i], 0.0, 1e-2);
}

TEST(ParameterStore, OrderCountAndClone) {
  ParameterStore<float> store;
  store.add("b", {2});
  store.add("a", {3, 4});
  EXPECT_EQ(store.scalar_count(), 14u);
  EXPECT_EQ(store.begin()->first, "b");
  EXPECT_THROW(store.add("a", {1}), ContractError);
  EXPECT_THROW(store.get("missing"), ContractError);

  store.get("a")[5] = 2.5f;
  ParameterStore<float> copy = store.clone();
  store.get("a")[5] = 0.0f;
  EXPECT_EQ(copy.get("a")[5], 2.5f);

  ParameterStore<double> wide;
  wide.add("b", {2});
  wide.add("a", {3, 4});
  wide.assign_from(copy);
  EXPECT_EQ(wide.get("a")[5], 2.5);
}

TEST(Initialization, FanInBound) {
  Rng rng(8);
  Tensor<double> w({64, 32});
  init_fan_in_uniform(w, 64, rng);
  const double bound = std::sqrt(1.0 / 64.0);
  double lo = 1, hi = -1;
  for (double v : w.data()) lo = std::min(lo, v), hi = std::max(hi, v);
  EXPECT_GE(lo, -bound);
  EXPECT_LE(hi, bound);
  EXPECT_LT(lo, -0.9 * bound);
  EXPECT_GT(hi, 0.9 * bound);
}

}  // namespace
}  // namespace dalign
