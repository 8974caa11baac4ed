#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace dalign {

inline constexpr std::size_t kNumClasses = 8;

// Shared intention/action label set of the pick task, in canonical phase order.
enum class ActionClass : int {
  Reaching = 0,
  Grasping = 1,
  Lifting = 2,
  Holding = 3,
  Transporting = 4,
  Placing = 5,
  Releasing = 6,
  Nothing = 7,
};

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "Reaching", "Grasping", "Lifting", "Holding", "Transporting", "Placing", "Releasing", "Nothing"};

// Throws IndexError outside [0, 8).
std::string_view class_name(int id);
int class_id(std::string_view name);
void check_class_id(int id);

// Probability vector over the eight classes; sums to 1 within 1e-6.
struct ClassDistribution {
  std::array<double, kNumClasses> probs{};

  // Validates range and normalization.
  static ClassDistribution from(std::span<const double> values);
  static ClassDistribution from(std::span<const float> values);
  static ClassDistribution one_hot(int id);
  static ClassDistribution uniform();

  // Lowest id wins exact ties.
  int argmax() const;
  double max_prob() const { return probs[static_cast<std::size_t>(argmax())]; }
};

}  // namespace dalign
