#include "dalign/alignment.hpp"

#include <cstdio>
#include <fstream>
#include <json.hpp>

#include "dalign/errors.hpp"
#include "dalign/ops.hpp"

namespace dalign {

ClassCorrespondence ClassCorrespondence::identity() {
  ClassCorrespondence c;
  for (int i = 0; i < static_cast<int>(kNumClasses); ++i) c.allow(i, i);
  return c;
}

ClassCorrespondence& ClassCorrespondence::allow(int human, int robot) {
  check_class_id(human);
  check_class_id(robot);
  allowed_[static_cast<std::size_t>(human)][static_cast<std::size_t>(robot)] = true;
  return *this;
}

bool ClassCorrespondence::contains(int human, int robot) const {
  check_class_id(human);
  check_class_id(robot);
  return allowed_[static_cast<std::size_t>(human)][static_cast<std::size_t>(robot)];
}

template <typename T>
Tensor<T> ClassCorrespondence::matrix() const {
  Tensor<T> m({kNumClasses, kNumClasses});
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    for (std::size_t j = 0; j < kNumClasses; ++j) m.at(i, j) = allowed_[i][j] ? T(1) : T(0);
  }
  return m;
}

int delta(int human, int robot, const ClassCorrespondence& corr) { return corr.contains(human, robot) ? 1 : 0; }

AlignmentReport alignment_score(std::span<const ClassDistribution> human, std::span<const ClassDistribution> robot,
                                const ClassCorrespondence& corr) {
  if (human.size() != robot.size()) {
    throw DimensionError("alignment needs equal lengths, got " + std::to_string(human.size()) + " and " +
                         std::to_string(robot.size()));
  }
  if (human.empty()) throw ContractError("alignment needs at least one timestep");
  AlignmentReport report;
  std::array<std::size_t, kNumClasses> support{}, agree{};
  double total = 0.0;
  for (std::size_t t = 0; t < human.size(); ++t) {
    AlignmentRow row;
    row.t = t;
    row.human_class = human[t].argmax();
    row.robot_class = robot[t].argmax();
    row.delta = delta(row.human_class, row.robot_class, corr);
    row.p_human = human[t].max_prob();
    row.p_robot = robot[t].max_prob();
    row.contribution = row.delta * row.p_human * row.p_robot;
    total += row.contribution;
    ++support[static_cast<std::size_t>(row.human_class)];
    agree[static_cast<std::size_t>(row.human_class)] += static_cast<std::size_t>(row.delta);
    report.rows.push_back(row);
  }
  report.score = total / static_cast<double>(human.size());
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (support[c] > 0) report.per_class_agreement[c] = static_cast<double>(agree[c]) / static_cast<double>(support[c]);
  }
  return report;
}

template <typename T>
Tensor<T> soft_alignment_loss(const Tensor<T>& human_probs, const Tensor<T>& robot_probs,
                              const ClassCorrespondence& corr) {
  if (human_probs.rank() != 2 || robot_probs.rank() != 2 || human_probs.dim(1) != kNumClasses ||
      robot_probs.dim(1) != kNumClasses) {
    throw DimensionError("soft alignment expects [T×8] probability matrices");
  }
  if (human_probs.dim(0) != robot_probs.dim(0)) {
    throw DimensionError("alignment needs equal lengths, got " + std::to_string(human_probs.dim(0)) + " and " +
                         std::to_string(robot_probs.dim(0)));
  }
  const std::size_t steps = human_probs.dim(0);
  if (steps == 0) throw ContractError("alignment needs at least one timestep");
  // (P_R·Mᵀ)[t,c] is the robot mass consistent with human class c.
  const Tensor<T> consistent = ops::matmul_transposed(robot_probs, corr.matrix<T>());
  const Tensor<T> agreement = ops::sum(ops::mul(human_probs, consistent));
  return ops::add_scalar(ops::scale(agreement, static_cast<T>(-1.0 / static_cast<double>(steps))), T(1));
}

void write_alignment_csv(const std::filesystem::path& path, const AlignmentReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "t,human_class,robot_class,delta,p_human,p_robot,contribution\n";
  char buf[160];
  for (const AlignmentRow& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%zu,%d,%d,%d,%.9g,%.9g,%.9g\n", r.t, r.human_class, r.robot_class, r.delta,
                  r.p_human, r.p_robot, r.contribution);
    out << buf;
  }
  std::snprintf(buf, sizeof buf, "S,,,,,,%.12g\n", report.score);
  out << buf;
  if (!out) throw IoError("failed writing " + path.string());
}

std::string alignment_json(const AlignmentReport& report) {
  nlohmann::ordered_json j;
  j["T"] = report.length();
  j["S"] = report.score;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    const std::string name(kClassNames[c]);
    if (report.per_class_agreement[c]) {
      per_class[name] = *report.per_class_agreement[c];
    } else {
      per_class[name] = nullptr;
    }
  }
  j["per_class_agreement"] = per_class;
  return j.dump(2);
}

template Tensor<float> ClassCorrespondence::matrix<float>() const;
template Tensor<double> ClassCorrespondence::matrix<double>() const;
template Tensor<float> soft_alignment_loss<float>(const Tensor<float>&, const Tensor<float>&,
                                                  const ClassCorrespondence&);
template Tensor<double> soft_alignment_loss<double>(const Tensor<double>&, const Tensor<double>&,
                                                    const ClassCorrespondence&);

}  // namespace dalign
