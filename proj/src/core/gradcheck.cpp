#include "dalign/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dalign/errors.hpp"
#include "dalign/random.hpp"

namespace dalign {
namespace {

double evaluate(const std::function<Tensor<double>()>& loss) {
  const Tensor<double> value = loss();
  if (value.size() != 1) {
    throw ContractError("gradient check needs a scalar function, got shape " +
                        shape_string(value.shape()));
  }
  return value.item();
}

std::vector<std::size_t> pick_entries(std::size_t size, std::size_t limit, Rng& rng) {
  std::vector<std::size_t> all(size);
  for (std::size_t i = 0; i < size; ++i) all[i] = i;
  if (limit == 0 || limit >= size) return all;
  rng.shuffle(all);
  all.resize(limit);
  std::sort(all.begin(), all.end());
  return all;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<Tensor<double>()>& loss,
                                        std::vector<NamedTensor> inputs,
                                        const GradCheckOptions& options) {
  for (auto& [name, t] : inputs) {
    if (!t.requires_grad()) t.set_requires_grad(true);
    t.zero_grad();
  }
  {
    Tape<double> tape;
    const Tensor<double> value = loss();
    if (value.size() != 1) {
      throw ContractError("gradient check needs a scalar function, got shape " +
                          shape_string(value.shape()));
    }
    tape.backward(value);
  }

  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& [name, t] : inputs) {
    const std::vector<double> analytic(t.grad().begin(), t.grad().end());
    for (std::size_t i : pick_entries(t.size(), options.max_entries_per_tensor, rng)) {
      const double original = t[i];
      auto central = [&](double h) {
        auto at = [&](double offset) {
          t[i] = original + offset;
          return evaluate(loss);
        };
        const double d = (-at(2 * h) + 8 * at(h) - 8 * at(-h) + at(-2 * h)) / (12 * h);
        t[i] = original;
        return d;
      };
      auto rel_error = [&](double numeric) {
        return std::abs(analytic[i] - numeric) / std::max(std::abs(numeric), options.denominator_floor);
      };
      const double h = options.step * std::max(1.0, std::abs(original));
      double numeric = central(h);
      double err = rel_error(numeric);
      if (err > options.tolerance && options.refine_factor > 1.0) {
        // A stencil straddling a kink (ReLU at 0) is wrong at any step that
        // reaches it; a shorter stencil usually clears it. A wrong adjoint
        // disagrees with both estimates.
        const double fine = central(h / options.refine_factor);
        if (rel_error(fine) < err) {
          numeric = fine;
          err = rel_error(fine);
        }
      }

      ++result.entries_checked;
      if (!(err <= result.max_relative_error)) {
        result.max_relative_error = err;
        result.worst_tensor = name;
        result.worst_index = i;
        result.worst_analytic = analytic[i];
        result.worst_numeric = numeric;
      }
    }
  }
  result.passed = result.max_relative_error <= options.tolerance;
  return result;
}

GradCheckResult finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>& f,
                                        Tensor<double> x, const GradCheckOptions& options) {
  return finite_difference_check([&f, x] { return f(x); }, {{"x", x}}, options);
}

}  // namespace dalign
