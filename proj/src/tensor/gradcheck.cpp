#include "tfn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace tfn {

namespace {

void cast_all(const std::vector<NamedTensor>& checked, const std::vector<Tensor>& aux, DType to) {
  for (const auto& p : checked) Tensor(p.tensor).convert_(to);
  for (const auto& t : aux) Tensor(t).convert_(to);
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss, const std::vector<NamedTensor>& checked,
                           const std::vector<Tensor>& aux, const GradCheckOptions& opts) {
  GradCheckReport report;
  std::vector<DType> original;
  for (const auto& p : checked) original.push_back(p.tensor.dtype());
  std::vector<DType> original_aux;
  for (const auto& t : aux) original_aux.push_back(t.dtype());

  auto restore = [&] {
    for (std::size_t i = 0; i < checked.size(); ++i) Tensor(checked[i].tensor).convert_(original[i]);
    for (std::size_t i = 0; i < aux.size(); ++i) Tensor(aux[i]).convert_(original_aux[i]);
  };

  // analytic pass
  cast_all(checked, aux, opts.analytic_dtype);
  std::vector<std::vector<double>> analytic;
  {
    for (const auto& p : checked) Tensor(p.tensor).zero_grad();
    Tensor l = loss();
    const double v = l.item();
    if (!std::isfinite(v)) {
      report.aborted = true;
      report.diagnostic = "non-finite loss (" + std::to_string(v) + ") in analytic pass";
      restore();
      return report;
    }
    l.backward();
    for (const auto& p : checked) {
      Tensor t = p.tensor;
      analytic.push_back(t.has_grad() ? t.grad().to_vector() : std::vector<double>(static_cast<std::size_t>(t.numel()), 0.0));
      t.zero_grad();
    }
  }

  // numeric pass in 64-bit
  cast_all(checked, aux, DType::F64);
  NoGradGuard no_grad;
  report.passed = true;
  for (std::size_t pi = 0; pi < checked.size(); ++pi) {
    Tensor t = checked[pi].tensor;
    const std::int64_t n = t.numel();
    std::int64_t stride = 1;
    if (opts.max_elements > 0 && n > opts.max_elements) stride = (n + opts.max_elements - 1) / opts.max_elements;
    ParamCheck pc;
    pc.name = checked[pi].name;
    double max_diff = 0.0;
    double max_a = 0.0;
    double max_n = 0.0;
    auto data = t.data<double>();
    for (std::int64_t i = 0; i < n; i += stride) {
      const auto iu = static_cast<std::size_t>(i);
      const double orig = data[iu];
      data[iu] = orig + opts.step;
      const double fp = loss().item();
      data[iu] = orig - opts.step;
      const double fm = loss().item();
      data[iu] = orig;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        report.aborted = true;
        report.passed = false;
        report.diagnostic = "non-finite loss while perturbing " + pc.name + "[" + std::to_string(i) + "]";
        restore();
        return report;
      }
      const double num = (fp - fm) / (2.0 * opts.step);
      const double an = analytic[pi][iu];
      max_diff = std::max(max_diff, std::abs(an - num));
      max_a = std::max(max_a, std::abs(an));
      max_n = std::max(max_n, std::abs(num));
      ++pc.checked;
    }
    pc.max_abs_analytic = std::max(max_a, max_n);
    pc.rel_error = max_diff;  // divided below once the global scale is known
    report.params.push_back(pc);
  }
  // A parameter whose true gradient is identically zero (a key bias under
  // softmax, say) would otherwise divide round-off by round-off.
  double global = 0.0;
  for (const auto& pc : report.params) global = std::max(global, pc.max_abs_analytic);
  const double floor = kRelativeFloor * global;
  for (auto& pc : report.params) {
    const double denom = std::max(pc.max_abs_analytic, floor);
    pc.rel_error = denom > 0.0 ? pc.rel_error / denom : 0.0;
    report.max_rel_error = std::max(report.max_rel_error, pc.rel_error);
    if (!(pc.rel_error < opts.tol)) report.passed = false;
  }
  if (!report.passed) {
    std::ostringstream os;
    os << "max relative error " << report.max_rel_error << " >= tol " << opts.tol;
    report.diagnostic = os.str();
  }
  restore();
  return report;
}

}  // namespace tfn
