#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

struct GradSuitePrecision {
  DType dtype;
  double tol;
};
inline constexpr GradSuitePrecision kGradSuitePrecisions[] = {{DType::F32, 1e-4}, {DType::F64, 1e-6}};

/// Outcome of one operator or block in one precision.
struct GradSuiteResult {
  std::string group;
  std::string name;
  DType dtype = DType::F64;
  double tol = 0.0;
  int seeds = 0;  // seeds run, fewer than requested after a failure
  double max_rel_error = 0.0;
  bool passed = false;
  std::string diagnostic;  // first failing seed, if any
};

struct GradSuiteOptions {
  int seeds = 20;
  /// Runs only this group when not empty.
  std::string group;
  std::function<void(const GradSuiteResult&)> progress;
};

/// Finite-difference checks of every differentiable operator and of the
/// composed network blocks at tiny sizes, each over `seeds` random draws.
std::vector<GradSuiteResult> run_gradient_suite(const GradSuiteOptions& opts = {});
std::vector<std::string> gradient_suite_groups();

}  // namespace tfn
