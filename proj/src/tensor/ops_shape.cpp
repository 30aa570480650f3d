#include <algorithm>
#include <cstring>

#include "tfn/ops.hpp"

namespace tfn {

namespace {

std::int64_t norm_axis(std::int64_t axis, std::int64_t rank, const Shape& s) {
  if (axis < 0) axis += rank;
  if (axis < 0 || axis >= rank) throw DimensionError("axis out of range for shape " + shape_str(s));
  return axis;
}

// [outer, len, inner] decomposition around `axis`.
struct AxisSplit {
  std::int64_t outer = 1, len = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::int64_t axis) {
  AxisSplit r;
  for (std::int64_t i = 0; i < axis; ++i) r.outer *= s[static_cast<std::size_t>(i)];
  r.len = s[static_cast<std::size_t>(axis)];
  for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Tensor reshape(const Tensor& a, Shape shape) {
  std::int64_t known = 1;
  int infer = -1;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (shape[i] == -1) {
      if (infer >= 0) throw DimensionError("reshape: more than one inferred extent in " + shape_str(shape));
      infer = static_cast<int>(i);
    } else {
      known *= shape[i];
    }
  }
  if (infer >= 0) {
    if (known == 0 || a.numel() % known != 0) {
      throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    shape[static_cast<std::size_t>(infer)] = a.numel() / known;
  }
  if (numel_of(shape) != a.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->storage = a.impl()->storage;
  impl->shape = shape;
  Tensor out(std::move(impl));
  const Shape in_shape = a.shape();
  attach_grad_fn(out, "reshape", {a}, [in_shape](const Tensor& g) -> std::vector<Tensor> {
    auto impl = std::make_shared<TensorImpl>();
    impl->storage = g.impl()->storage;
    impl->shape = in_shape;
    return {Tensor(std::move(impl))};
  });
  return out;
}

Tensor unsqueeze(const Tensor& a, std::int64_t axis) {
  const auto r = a.dim() + 1;
  if (axis < 0) axis += r;
  if (axis < 0 || axis >= r) throw DimensionError("unsqueeze: axis out of range for " + shape_str(a.shape()));
  Shape s = a.shape();
  s.insert(s.begin() + axis, 1);
  return reshape(a, s);
}

namespace {

Tensor permute_raw(const Tensor& a, const std::vector<std::int64_t>& dims) {
  const auto r = a.dim();
  const Shape& in = a.shape();
  Shape out_shape(static_cast<std::size_t>(r));
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r));
  std::int64_t s = 1;
  for (std::int64_t i = r - 1; i >= 0; --i) {
    in_strides[static_cast<std::size_t>(i)] = s;
    s *= in[static_cast<std::size_t>(i)];
  }
  std::vector<std::int64_t> src_strides(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
    src_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(dims[static_cast<std::size_t>(i)])];
  }
  Tensor out = Tensor::empty(out_shape, a.dtype());
  const std::int64_t n = a.numel();
  if (n == 0) return out;
  dispatch(a.dtype(), [&]<typename T>() {
    auto src = a.data<T>();
    auto dst = out.data<T>();
    if (r == 0) {
      dst[0] = src[0];
      return;
    }
    std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
    const std::int64_t inner = out_shape.back();
    const std::int64_t inner_stride = src_strides.back();
    std::int64_t off = 0;
    for (std::int64_t base = 0; base < n; base += inner) {
      for (std::int64_t j = 0; j < inner; ++j) {
        dst[static_cast<std::size_t>(base + j)] = src[static_cast<std::size_t>(off + j * inner_stride)];
      }
      for (std::int64_t d = r - 2; d >= 0; --d) {
        const auto du = static_cast<std::size_t>(d);
        ++idx[du];
        off += src_strides[du];
        if (idx[du] < out_shape[du]) break;
        off -= src_strides[du] * out_shape[du];
        idx[du] = 0;
      }
    }
  });
  return out;
}

}  // namespace

Tensor permute(const Tensor& a, const std::vector<std::int64_t>& dims_in) {
  const auto r = a.dim();
  if (static_cast<std::int64_t>(dims_in.size()) != r) {
    throw DimensionError("permute: " + std::to_string(dims_in.size()) + " axes given for shape " +
                         shape_str(a.shape()));
  }
  std::vector<std::int64_t> dims(dims_in.size());
  std::vector<bool> used(dims_in.size(), false);
  for (std::size_t i = 0; i < dims.size(); ++i) {
    dims[i] = norm_axis(dims_in[i], r, a.shape());
    if (used[static_cast<std::size_t>(dims[i])]) throw DimensionError("permute: repeated axis");
    used[static_cast<std::size_t>(dims[i])] = true;
  }
  Tensor out = permute_raw(a, dims);
  std::vector<std::int64_t> inverse(dims.size());
  for (std::size_t i = 0; i < dims.size(); ++i) inverse[static_cast<std::size_t>(dims[i])] = static_cast<std::int64_t>(i);
  attach_grad_fn(out, "permute", {a}, [inverse](const Tensor& g) -> std::vector<Tensor> {
    return {permute_raw(g, inverse)};
  });
  return out;
}

Tensor transpose(const Tensor& a, std::int64_t d0, std::int64_t d1) {
  const auto r = a.dim();
  d0 = norm_axis(d0, r, a.shape());
  d1 = norm_axis(d1, r, a.shape());
  std::vector<std::int64_t> dims(static_cast<std::size_t>(r));
  for (std::int64_t i = 0; i < r; ++i) dims[static_cast<std::size_t>(i)] = i;
  std::swap(dims[static_cast<std::size_t>(d0)], dims[static_cast<std::size_t>(d1)]);
  return permute(a, dims);
}

Tensor slice(const Tensor& a, std::int64_t axis, std::int64_t start, std::int64_t length) {
  axis = norm_axis(axis, a.dim(), a.shape());
  const auto sp = split_at(a.shape(), axis);
  if (start < 0 || length < 0 || start + length > sp.len) {
    throw DimensionError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) +
                         ") out of range on axis " + std::to_string(axis) + " of " + shape_str(a.shape()));
  }
  Shape out_shape = a.shape();
  out_shape[static_cast<std::size_t>(axis)] = length;
  Tensor out = Tensor::empty(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto src = a.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      std::memcpy(dst.data() + o * length * sp.inner, src.data() + (o * sp.len + start) * sp.inner,
                  static_cast<std::size_t>(length * sp.inner) * sizeof(T));
    }
  });
  const Shape in_shape = a.shape();
  attach_grad_fn(out, "slice", {a}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga = Tensor::zeros(in_shape, g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto src = g.data<T>();
      auto dst = ga.data<T>();
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        std::memcpy(dst.data() + (o * sp.len + start) * sp.inner, src.data() + o * length * sp.inner,
                    static_cast<std::size_t>(length * sp.inner) * sizeof(T));
      }
    });
    return {ga};
  });
  return out;
}

Tensor concat(const std::vector<Tensor>& parts, std::int64_t axis) {
  if (parts.empty()) throw DimensionError("concat of zero tensors");
  const Tensor& first = parts.front();
  axis = norm_axis(axis, first.dim(), first.shape());
  Shape out_shape = first.shape();
  out_shape[static_cast<std::size_t>(axis)] = 0;
  std::vector<std::int64_t> lens;
  for (const auto& p : parts) {
    if (p.dim() != first.dim() || p.dtype() != first.dtype()) {
      throw DimensionError("concat: incompatible shapes " + shape_str(first.shape()) + " and " + shape_str(p.shape()));
    }
    for (std::int64_t d = 0; d < p.dim(); ++d) {
      if (d != axis && p.shape()[static_cast<std::size_t>(d)] != first.shape()[static_cast<std::size_t>(d)]) {
        throw DimensionError("concat: incompatible shapes " + shape_str(first.shape()) + " and " +
                             shape_str(p.shape()));
      }
    }
    lens.push_back(p.shape()[static_cast<std::size_t>(axis)]);
    out_shape[static_cast<std::size_t>(axis)] += lens.back();
  }
  const auto sp = split_at(out_shape, axis);
  Tensor out = Tensor::empty(out_shape, first.dtype());
  dispatch(first.dtype(), [&]<typename T>() {
    auto dst = out.data<T>();
    std::int64_t at = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      auto src = parts[k].data<T>();
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        std::memcpy(dst.data() + (o * sp.len + at) * sp.inner, src.data() + o * lens[k] * sp.inner,
                    static_cast<std::size_t>(lens[k] * sp.inner) * sizeof(T));
      }
      at += lens[k];
    }
  });
  attach_grad_fn(out, "concat", parts, [=](const Tensor& g) -> std::vector<Tensor> {
    std::vector<Tensor> grads;
    std::int64_t at = 0;
    for (std::size_t k = 0; k < lens.size(); ++k) {
      Shape s = out_shape;
      s[static_cast<std::size_t>(axis)] = lens[k];
      Tensor gk = Tensor::empty(s, g.dtype());
      dispatch(g.dtype(), [&]<typename T>() {
        auto src = g.data<T>();
        auto dst = gk.data<T>();
        for (std::int64_t o = 0; o < sp.outer; ++o) {
          std::memcpy(dst.data() + o * lens[k] * sp.inner, src.data() + (o * sp.len + at) * sp.inner,
                      static_cast<std::size_t>(lens[k] * sp.inner) * sizeof(T));
        }
      });
      grads.push_back(gk);
      at += lens[k];
    }
    return grads;
  });
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::empty({}, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    double acc = 0.0;
    for (auto v : a.data<T>()) acc += static_cast<double>(v);
    out.data<T>()[0] = static_cast<T>(acc);
  });
  const Shape in_shape = a.shape();
  attach_grad_fn(out, "sum", {a}, [in_shape](const Tensor& g) -> std::vector<Tensor> {
    return {Tensor::full(in_shape, g.item(), g.dtype())};
  });
  return out;
}

Tensor mean(const Tensor& a) {
  if (a.numel() == 0) throw EmptyTensorError("mean of an empty tensor");
  // Division rather than multiplication by 1/n keeps the result correctly rounded.
  return div(sum(a), Tensor::scalar(static_cast<double>(a.numel()), a.dtype()));
}

Tensor sum(const Tensor& a, std::int64_t axis, bool keepdim) {
  axis = norm_axis(axis, a.dim(), a.shape());
  const auto sp = split_at(a.shape(), axis);
  Shape out_shape = a.shape();
  if (keepdim) {
    out_shape[static_cast<std::size_t>(axis)] = 1;
  } else {
    out_shape.erase(out_shape.begin() + axis);
  }
  Tensor out = Tensor::zeros(out_shape, a.dtype());
  dispatch(a.dtype(), [&]<typename T>() {
    auto src = a.data<T>();
    auto dst = out.data<T>();
    for (std::int64_t o = 0; o < sp.outer; ++o) {
      for (std::int64_t l = 0; l < sp.len; ++l) {
        const T* row = src.data() + (o * sp.len + l) * sp.inner;
        T* acc = dst.data() + o * sp.inner;
        for (std::int64_t i = 0; i < sp.inner; ++i) acc[i] += row[i];
      }
    }
  });
  const Shape in_shape = a.shape();
  attach_grad_fn(out, "sum_axis", {a}, [=](const Tensor& g) -> std::vector<Tensor> {
    Tensor ga = Tensor::empty(in_shape, g.dtype());
    dispatch(g.dtype(), [&]<typename T>() {
      auto src = g.data<T>();
      auto dst = ga.data<T>();
      for (std::int64_t o = 0; o < sp.outer; ++o) {
        for (std::int64_t l = 0; l < sp.len; ++l) {
          std::memcpy(dst.data() + (o * sp.len + l) * sp.inner, src.data() + o * sp.inner,
                      static_cast<std::size_t>(sp.inner) * sizeof(T));
        }
      }
    });
    return {ga};
  });
  return out;
}

Tensor mean(const Tensor& a, std::int64_t axis, bool keepdim) {
  const auto len = a.size(axis);
  if (len == 0) throw EmptyTensorError("mean over an empty axis of " + shape_str(a.shape()));
  return div(sum(a, axis, keepdim), Tensor::scalar(static_cast<double>(len), a.dtype()));
}

}  // namespace tfn
