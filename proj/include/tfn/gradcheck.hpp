#pragma once

#include <functional>
#include <string>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

inline constexpr double kRelativeFloor = 1e-3;

struct GradCheckOptions {
  double tol = 1e-6;
  double step = 1e-5;
  /// Precision of the analytic (backward) pass. Finite differences always run in 64-bit.
  DType analytic_dtype = DType::F64;
  /// Upper bound on perturbed elements per parameter (evenly strided subset); 0 = all.
  std::int64_t max_elements = 0;
};

struct ParamCheck {
  std::string name;
  std::int64_t checked = 0;
  double rel_error = 0.0;
  /// max(max|a|, max|n|) over the checked elements.
  double max_abs_analytic = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  bool aborted = false;
  double max_rel_error = 0.0;
  std::vector<ParamCheck> params;
  std::string diagnostic;
};

/// Compares the analytic gradient of `loss` with central finite differences.
/// `checked` tensors are perturbed and compared; `aux` tensors (inputs,
/// buffers) are only cast alongside. All tensors are restored to their
/// original dtype afterwards. Relative error per parameter is
/// max|a - n| / max(max|a|, max|n|, kRelativeFloor * G), where G is the
/// largest gradient magnitude over all checked tensors.
GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& checked,
                           const std::vector<Tensor>& aux, const GradCheckOptions& opts);

}  // namespace tfn
