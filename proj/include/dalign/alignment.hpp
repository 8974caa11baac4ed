#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "dalign/classes.hpp"
#include "dalign/tensor.hpp"

namespace dalign {

// For each human class, the robot classes that count as semantically consistent.
class ClassCorrespondence {
 public:
  // Empty map; use identity() for the default.
  ClassCorrespondence() = default;
  static ClassCorrespondence identity();

  ClassCorrespondence& allow(int human, int robot);
  bool contains(int human, int robot) const;

  // Row-major 8×8 indicator, rows human, columns robot.
  template <typename T>
  Tensor<T> matrix() const;

 private:
  std::array<std::array<bool, kNumClasses>, kNumClasses> allowed_{};
};

// 1 when `robot` is consistent with `human`, else 0. IndexError outside [0, 8).
int delta(int human, int robot, const ClassCorrespondence& corr);

struct AlignmentRow {
  std::size_t t = 0;
  int human_class = 0;
  int robot_class = 0;
  int delta = 0;
  double p_human = 0.0;
  double p_robot = 0.0;
  double contribution = 0.0;
};

struct AlignmentReport {
  std::vector<AlignmentRow> rows;
  double score = 0.0;
  // Per human argmax class: share of its timesteps whose robot argmax is
  // consistent. Empty when the class never wins.
  std::array<std::optional<double>, kNumClasses> per_class_agreement{};

  std::size_t length() const { return rows.size(); }
};

// Hard score: argmax classes per step, contribution δ·max P_H·max P_R, mean over t.
// DimensionError on unequal lengths, ContractError on empty input.
AlignmentReport alignment_score(std::span<const ClassDistribution> human, std::span<const ClassDistribution> robot,
                                const ClassCorrespondence& corr = ClassCorrespondence::identity());

// Differentiable surrogate 1 − mean_t Σ_{c,c'} [c' ∈ corr[c]] P_H(t,c) P_R(t,c')
// over probability matrices [T×8].
template <typename T>
Tensor<T> soft_alignment_loss(const Tensor<T>& human_probs, const Tensor<T>& robot_probs,
                              const ClassCorrespondence& corr = ClassCorrespondence::identity());

// One row per step with columns t,human_class,robot_class,delta,p_human,p_robot,contribution,
// then a footer row "S,,,,,,<score>".
void write_alignment_csv(const std::filesystem::path& path, const AlignmentReport& report);
// {"T": ..., "S": ..., "per_class_agreement": {"Reaching": value|null, ...}}
std::string alignment_json(const AlignmentReport& report);

}  // namespace dalign
