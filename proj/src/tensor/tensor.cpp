#include "tfn/tensor.hpp"

#include <cmath>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "tfn/ops.hpp"

namespace tfn {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

std::int64_t numel_of(const Shape& s) {
  std::int64_t n = 1;
  for (auto e : s) n *= e;
  return n;
}

const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

void Storage::convert(DType to) {
  if (to == dtype) return;
  if (to == DType::F64) {
    f64.assign(f32.begin(), f32.end());
    f32.clear();
    f32.shrink_to_fit();
  } else {
    f32.resize(f64.size());
    for (std::size_t i = 0; i < f64.size(); ++i) f32[i] = static_cast<float>(f64[i]);
    f64.clear();
    f64.shrink_to_fit();
  }
  dtype = to;
}

Tensor Tensor::empty(Shape shape, DType dtype) {
  for (auto e : shape) {
    if (e < 0) throw DimensionError("negative extent in shape " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = std::make_shared<Storage>();
  impl->storage->dtype = dtype;
  const auto n = static_cast<std::size_t>(numel_of(shape));
  if (dtype == DType::F32) {
    impl->storage->f32.resize(n);
  } else {
    impl->storage->f64.resize(n);
  }
  impl->shape = std::move(shape);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, DType dtype) { return empty(std::move(shape), dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  Tensor t = empty(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    for (auto& v : t.data<T>()) v = static_cast<T>(value);
  });
  return t;
}

Tensor Tensor::from(const std::vector<double>& values, Shape shape, DType dtype) {
  if (static_cast<std::int64_t>(values.size()) != numel_of(shape)) {
    throw DimensionError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
  }
  Tensor t = empty(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    auto d = t.data<T>();
    for (std::size_t i = 0; i < values.size(); ++i) d[i] = static_cast<T>(values[i]);
  });
  return t;
}

std::int64_t Tensor::size(std::int64_t axis) const {
  const auto r = dim();
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("axis out of range for shape " + shape_str(shape()));
  return impl_->shape[static_cast<std::size_t>(axis)];
}

template <>
std::span<float> Tensor::data<float>() {
  return {impl_->storage->f32.data(), impl_->storage->f32.size()};
}
template <>
std::span<double> Tensor::data<double>() {
  return {impl_->storage->f64.data(), impl_->storage->f64.size()};
}
template <>
std::span<const float> Tensor::data<float>() const {
  return {impl_->storage->f32.data(), impl_->storage->f32.size()};
}
template <>
std::span<const double> Tensor::data<double>() const {
  return {impl_->storage->f64.data(), impl_->storage->f64.size()};
}

double Tensor::item() const {
  if (numel() != 1) throw DimensionError("item() needs a single element, got shape " + shape_str(shape()));
  return at(0);
}

double Tensor::at(std::int64_t i) const {
  return dtype() == DType::F32 ? static_cast<double>(impl_->storage->f32[static_cast<std::size_t>(i)])
                               : impl_->storage->f64[static_cast<std::size_t>(i)];
}

void Tensor::set(std::int64_t i, double v) {
  if (dtype() == DType::F32) {
    impl_->storage->f32[static_cast<std::size_t>(i)] = static_cast<float>(v);
  } else {
    impl_->storage->f64[static_cast<std::size_t>(i)] = v;
  }
}

std::vector<double> Tensor::to_vector() const {
  std::vector<double> out(static_cast<std::size_t>(numel()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = at(static_cast<std::int64_t>(i));
  return out;
}

Tensor& Tensor::requires_grad_(bool on) {
  if (!is_leaf()) throw std::logic_error("requires_grad_ is only valid on leaf tensors");
  impl_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (!impl_->grad) return {};
  return Tensor(impl_->grad);
}

Tensor Tensor::detach() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = impl_->storage;
  impl->shape = impl_->shape;
  return Tensor(std::move(impl));
}

Tensor Tensor::clone() const {
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = std::make_shared<Storage>(*impl_->storage);
  impl->shape = impl_->shape;
  return Tensor(std::move(impl));
}

void Tensor::convert_(DType to) {
  impl_->storage->convert(to);
  if (impl_->grad) impl_->grad->storage->convert(to);
}

Tensor Tensor::to(DType to) const {
  Tensor c = clone();
  c.impl_->storage->convert(to);
  return c;
}

void attach_grad_fn(Tensor& out, const char* name, std::vector<Tensor> inputs,
                    std::function<std::vector<Tensor>(const Tensor&)> backward) {
  if (!GradMode::enabled()) return;
  bool any = false;
  for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
  if (!any) return;
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs = std::move(inputs);
  node->backward = std::move(backward);
  out.impl()->grad_fn = std::move(node);
  out.impl()->requires_grad = true;
}

namespace {

void accumulate(std::shared_ptr<TensorImpl>& slot, const Tensor& g) {
  if (!slot) {
    slot = g.clone().impl_ptr();
    return;
  }
  Tensor acc(slot);
  if (acc.shape() != g.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(acc.shape()));
  }
  dispatch(acc.dtype(), [&]<typename T>() {
    auto a = acc.data<T>();
    auto b = g.data<T>();
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
  });
}

}  // namespace

void Tensor::backward() const {
  if (!requires_grad()) throw std::logic_error("backward() on a tensor that does not require grad");

  // Post-order DFS gives a topological order; walk it in reverse.
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node, idx] = stack.back();
    if (node->grad_fn && idx < node->grad_fn->inputs.size()) {
      TensorImpl* child = node->grad_fn->inputs[idx++].impl();
      if (child && child->requires_grad && !seen.count(child)) {
        seen.insert(child);
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(node);
    stack.pop_back();
  }

  std::unordered_map<TensorImpl*, std::shared_ptr<TensorImpl>> pending;
  pending[impl_.get()] = Tensor::ones(shape(), dtype()).impl_ptr();

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* node = *it;
    auto found = pending.find(node);
    if (found == pending.end()) continue;
    Tensor g(found->second);
    if (!node->grad_fn) {
      accumulate(node->grad, g);
      pending.erase(found);
      continue;
    }
    auto grads = node->grad_fn->backward(g);
    pending.erase(found);
    const auto& inputs = node->grad_fn->inputs;
    for (std::size_t i = 0; i < inputs.size() && i < grads.size(); ++i) {
      if (!grads[i].defined() || !inputs[i].defined() || !inputs[i].requires_grad()) continue;
      accumulate(pending[inputs[i].impl()], grads[i]);
    }
  }
}

}  // namespace tfn
