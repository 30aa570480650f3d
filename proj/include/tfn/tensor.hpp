#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tfn {

enum class DType : std::uint8_t { F32, F64 };

using Shape = std::vector<std::int64_t>;

/// Raised when operand shapes are incompatible. The message names both shapes.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when an operation receives a tensor with a zero extent it cannot handle.
class EmptyTensorError : public DimensionError {
 public:
  using DimensionError::DimensionError;
};

std::string shape_str(const Shape& s);
std::int64_t numel_of(const Shape& s);
const char* dtype_name(DType d);

// Dense contiguous buffer. Exactly one of the two vectors is populated,
// selected by `dtype`.
struct Storage {
  DType dtype = DType::F32;
  std::vector<float> f32;
  std::vector<double> f64;

  std::size_t size() const { return dtype == DType::F32 ? f32.size() : f64.size(); }
  void convert(DType to);
};

struct Node;
class Tensor;

struct TensorImpl {
  std::shared_ptr<Storage> storage;
  Shape shape;
  bool requires_grad = false;
  std::shared_ptr<TensorImpl> grad;
  std::shared_ptr<Node> grad_fn;
};

/// Shared handle to a row-major tensor. Copies alias the same data.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor empty(Shape shape, DType dtype = DType::F32);
  static Tensor zeros(Shape shape, DType dtype = DType::F32);
  static Tensor full(Shape shape, double value, DType dtype = DType::F32);
  static Tensor ones(Shape shape, DType dtype = DType::F32) { return full(std::move(shape), 1.0, dtype); }
  static Tensor scalar(double value, DType dtype = DType::F32) { return full({}, value, dtype); }
  static Tensor from(const std::vector<double>& values, Shape shape, DType dtype = DType::F32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t dim() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t size(std::int64_t axis) const;
  std::int64_t numel() const { return numel_of(impl_->shape); }
  DType dtype() const { return impl_->storage->dtype; }

  template <class T>
  std::span<T> data();
  template <class T>
  std::span<const T> data() const;

  double item() const;
  double at(std::int64_t flat_index) const;
  void set(std::int64_t flat_index, double value);
  std::vector<double> to_vector() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& requires_grad_(bool on = true);
  bool is_leaf() const { return impl_->grad_fn == nullptr; }
  bool has_grad() const { return impl_->grad != nullptr; }
  Tensor grad() const;
  void zero_grad() { impl_->grad.reset(); }

  /// Reverse-mode sweep from this tensor. Seeds with ones of this shape.
  void backward() const;

  /// Shares storage, drops autograd history.
  Tensor detach() const;
  /// Deep copy of the values; no history.
  Tensor clone() const;
  /// Converts the underlying storage in place (all aliases observe it).
  void convert_(DType to);
  /// New tensor with values cast to `to`.
  Tensor to(DType to) const;

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

template <>
std::span<float> Tensor::data<float>();
template <>
std::span<double> Tensor::data<double>();
template <>
std::span<const float> Tensor::data<float>() const;
template <>
std::span<const double> Tensor::data<double>() const;

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Autograd graph node. `backward` maps the output gradient to one gradient
// per input; undefined entries mean "no contribution".
struct Node {
  const char* name = "";
  std::vector<Tensor> inputs;
  std::function<std::vector<Tensor>(const Tensor& grad_out)> backward;

  bool needs_grad(std::size_t i) const { return inputs[i].defined() && inputs[i].requires_grad(); }
};

/// Thread-local switch; inference under NoGradGuard never builds graph nodes.
class GradMode {
 public:
  static bool enabled();
  static void set_enabled(bool on);
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set_enabled(false); }
  ~NoGradGuard() { GradMode::set_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Attaches a backward node to `out` when grad mode is on and any input needs it.
void attach_grad_fn(Tensor& out, const char* name, std::vector<Tensor> inputs,
                    std::function<std::vector<Tensor>(const Tensor&)> backward);

template <class F>
decltype(auto) dispatch(DType dt, F&& f) {
  if (dt == DType::F32) return f.template operator()<float>();
  return f.template operator()<double>();
}

}  // namespace tfn
