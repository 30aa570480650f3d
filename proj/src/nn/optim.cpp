#include "tfn/optim.hpp"

#include <algorithm>
#include <cmath>

namespace tfn {

std::int64_t default_warmup_steps(std::int64_t total_steps) {
  if (total_steps <= 0) return 0;
  return std::max<std::int64_t>(1, std::llround(0.1 * static_cast<double>(total_steps)));
}

LrSchedule make_schedule(double peak_lr, std::int64_t total_steps) {
  return {peak_lr, default_warmup_steps(total_steps), total_steps};
}

double lr_at_step(const LrSchedule& s, std::int64_t step) {
  if (step < 0 || step >= s.total_steps) return 0.0;
  if (step < s.warmup_steps) return s.peak_lr * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  const auto decay = s.total_steps - s.warmup_steps;
  return s.peak_lr * (static_cast<double>(s.total_steps - step) / static_cast<double>(decay));
}

Adam::Adam(std::vector<NamedTensor> params, AdamOptions opts) : params_(std::move(params)), opts_(opts) {
  for (const auto& p : params_) {
    m_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    v_.push_back(Tensor::zeros(p.tensor.shape(), p.tensor.dtype()));
    scale_.push_back(1.0);
  }
}

void Adam::set_lr_scale(const std::string& prefix, double scale) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name.rfind(prefix, 0) == 0) scale_[i] = scale;
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

void Adam::step(double lr) {
  ++steps_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].tensor;
    if (!p.has_grad()) continue;
    Tensor g = p.grad();
    const double rate = lr * scale_[i];
    dispatch(p.dtype(), [&]<typename T>() {
      auto w = p.data<T>();
      auto gd = g.data<T>();
      auto m = m_[i].data<T>();
      auto v = v_[i].data<T>();
      for (std::size_t j = 0; j < w.size(); ++j) {
        m[j] = static_cast<T>(opts_.beta1 * m[j] + (1.0 - opts_.beta1) * gd[j]);
        v[j] = static_cast<T>(opts_.beta2 * v[j] + (1.0 - opts_.beta2) * gd[j] * gd[j]);
        if (rate == 0.0) continue;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        w[j] = static_cast<T>(w[j] - rate * mhat / (std::sqrt(vhat) + opts_.eps));
      }
    });
  }
}

}  // namespace tfn
