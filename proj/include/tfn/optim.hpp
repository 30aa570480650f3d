#pragma once

#include <string>
#include <vector>

#include "tfn/tensor.hpp"

namespace tfn {

/// Linear warmup 0 -> peak over `warmup_steps`, then linear decay peak -> 0 at `total_steps`.
struct LrSchedule {
  double peak_lr = 0.0;
  std::int64_t warmup_steps = 0;
  std::int64_t total_steps = 0;
};

/// Warmup length used by the trainer: 10% of the total, at least one step.
std::int64_t default_warmup_steps(std::int64_t total_steps);
LrSchedule make_schedule(double peak_lr, std::int64_t total_steps);
/// Steps beyond total_steps clamp to 0.
double lr_at_step(const LrSchedule& s, std::int64_t step);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<NamedTensor> params, AdamOptions opts = {});

  /// One update with learning rate `lr` times each parameter's scale.
  /// A parameter whose effective rate is 0 is left bitwise unchanged.
  void step(double lr);
  void zero_grad();
  /// Multiplies the rate of every parameter whose name starts with `prefix`.
  void set_lr_scale(const std::string& prefix, double scale);
  std::int64_t step_count() const { return steps_; }
  const std::vector<NamedTensor>& params() const { return params_; }

 private:
  std::vector<NamedTensor> params_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::vector<double> scale_;
  AdamOptions opts_;
  std::int64_t steps_ = 0;
};

}  // namespace tfn
