// SPDX-License-Identifier: Apache-2.0
#include "permstr/numerics/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace permstr::num {

std::string to_string(DType dtype) { return dtype == DType::f32 ? "f32" : "f64"; }

std::size_t numel_of(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += "x";
    }
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

namespace {

Buffer make_buffer(DType dtype, std::size_t n, double fill) {
  if (dtype == DType::f32) {
    return std::vector<float>(n, static_cast<float>(fill));
  }
  return std::vector<double>(n, fill);
}

}  // namespace

Tensor Tensor::zeros(Shape shape, DType dtype) { return full(std::move(shape), 0.0, dtype); }

Tensor Tensor::full(Shape shape, double value, DType dtype) {
  auto impl = std::make_shared<TensorImpl>();
  impl->data = make_buffer(dtype, numel_of(shape), value);
  impl->shape = std::move(shape);
  impl->dtype = dtype;
  return Tensor(std::move(impl));
}

Tensor Tensor::from_values(Shape shape, std::span<const double> values, DType dtype) {
  if (values.size() != numel_of(shape)) {
    throw DimensionError("from_values: " + std::to_string(values.size()) +
                         " values for shape " + shape_string(shape));
  }
  Tensor t = zeros(std::move(shape), dtype);
  dispatch(dtype, [&]<typename T>() {
    std::transform(values.begin(), values.end(), t.data<T>().begin(),
                   [](double v) { return static_cast<T>(v); });
  });
  return t;
}

Tensor Tensor::from_values(Shape shape, std::initializer_list<double> values, DType dtype) {
  return from_values(std::move(shape), std::span<const double>(values.begin(), values.size()),
                     dtype);
}

Tensor Tensor::scalar(double value, DType dtype) { return full({1}, value, dtype); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::value(std::size_t index) const {
  return dispatch(dtype(), [&]<typename T>() -> double { return impl_->values<T>().at(index); });
}

void Tensor::set_value(std::size_t index, double v) {
  dispatch(dtype(), [&]<typename T>() { impl_->values<T>().at(index) = static_cast<T>(v); });
}

std::vector<double> Tensor::to_vector() const {
  return dispatch(dtype(), [&]<typename T>() {
    const auto& src = impl_->values<T>();
    return std::vector<double>(src.begin(), src.end());
  });
}

double Tensor::item() const {
  if (numel() != 1) {
    throw ContractError("item() on tensor of shape " + shape_string(shape()));
  }
  return value(0);
}

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

std::vector<double> Tensor::grad_vector() const {
  if (!impl_->grad) {
    return std::vector<double>(numel(), 0.0);
  }
  return std::visit(
      [](const auto& g) { return std::vector<double>(g.begin(), g.end()); }, *impl_->grad);
}

void Tensor::zero_grad() {
  if (impl_->grad) {
    std::visit([](auto& g) { std::fill(g.begin(), g.end(), 0); }, *impl_->grad);
  }
}

Tensor Tensor::to(DType target) const {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = impl_->shape;
  impl->dtype = target;
  impl->data = std::visit(
      [&](const auto& src) -> Buffer {
        if (target == DType::f32) {
          return std::vector<float>(src.begin(), src.end());
        }
        return std::vector<double>(src.begin(), src.end());
      },
      impl_->data);
  impl->requires_grad = impl_->requires_grad;
  return Tensor(std::move(impl));
}

}  // namespace permstr::num
