#pragma once

#include <string>
#include <vector>

#include "dalign/gradcheck.hpp"

namespace dalign {

struct GradientSuiteEntry {
  std::string module;
  std::string name;
  GradCheckResult result;
  double seconds = 0.0;
};

// Module names accepted by run_gradient_suite; "all" runs every module.
const std::vector<std::string>& gradient_suite_modules();

// 64-bit finite-difference checks of every differentiable primitive
// ("autodiff"), the full human and robot branches at reduced sizes ("human",
// "robot") and the soft alignment loss ("alignment"). ContractError for an
// unknown module name.
std::vector<GradientSuiteEntry> run_gradient_suite(const std::string& module = "all");

}  // namespace dalign
