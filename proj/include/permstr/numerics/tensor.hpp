// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <concepts>
#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "permstr/errors.hpp"

namespace permstr::num {

enum class DType { f32, f64 };

std::string to_string(DType dtype);

template <class T>
concept Scalar = std::same_as<T, float> || std::same_as<T, double>;

template <Scalar T>
constexpr DType dtype_of() {
  return std::same_as<T, float> ? DType::f32 : DType::f64;
}

// Calls f.template operator()<T>() with T matching the runtime dtype.
template <class F>
decltype(auto) dispatch(DType dtype, F&& f) {
  if (dtype == DType::f32) {
    return f.template operator()<float>();
  }
  return f.template operator()<double>();
}

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_string(const Shape& shape);

using Buffer = std::variant<std::vector<float>, std::vector<double>>;

class Tape;

struct TensorImpl {
  Shape shape;
  DType dtype = DType::f32;
  Buffer data;
  std::optional<Buffer> grad;
  bool requires_grad = false;
  // Set when the tensor is the output of a node recorded on a tape.
  const Tape* tape = nullptr;
  std::size_t node_index = 0;

  template <Scalar T>
  std::vector<T>& values() {
    return std::get<std::vector<T>>(data);
  }
  template <Scalar T>
  const std::vector<T>& values() const {
    return std::get<std::vector<T>>(data);
  }
  // Zero-initialized on first access.
  template <Scalar T>
  std::vector<T>& grad_values() {
    if (!grad) {
      grad = std::vector<T>(numel_of(shape), T{0});
    }
    return std::get<std::vector<T>>(*grad);
  }
};

// Shared handle to a dense row-major array. Copies alias the same storage;
// use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, DType dtype = DType::f32);
  static Tensor full(Shape shape, double value, DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::span<const double> values,
                            DType dtype = DType::f32);
  static Tensor from_values(Shape shape, std::initializer_list<double> values,
                            DType dtype = DType::f32);
  template <Scalar T>
  static Tensor from_vector(Shape shape, std::vector<T> values);
  static Tensor scalar(double value, DType dtype = DType::f32);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return numel_of(impl_->shape); }
  DType dtype() const { return impl_->dtype; }

  template <Scalar T>
  std::span<T> data() {
    check_dtype<T>();
    return impl_->values<T>();
  }
  template <Scalar T>
  std::span<const T> data() const {
    check_dtype<T>();
    return impl_->values<T>();
  }
  double value(std::size_t index) const;
  void set_value(std::size_t index, double v);
  std::vector<double> to_vector() const;
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool flag = true);
  bool has_grad() const { return impl_->grad.has_value(); }
  template <Scalar T>
  std::span<const T> grad() const {
    check_dtype<T>();
    if (!impl_->grad) {
      throw ContractError("tensor has no gradient buffer");
    }
    return std::get<std::vector<T>>(*impl_->grad);
  }
  std::vector<double> grad_vector() const;
  void zero_grad();

  // Detached deep copy in the requested precision.
  Tensor to(DType dtype) const;
  Tensor clone() const { return to(dtype()); }

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& shared() const { return impl_; }

 private:
  template <Scalar T>
  void check_dtype() const {
    if (impl_->dtype != dtype_of<T>()) {
      throw ContractError("dtype mismatch: tensor is " + to_string(impl_->dtype));
    }
  }

  std::shared_ptr<TensorImpl> impl_;
};

template <Scalar T>
Tensor Tensor::from_vector(Shape shape, std::vector<T> values) {
  if (values.size() != numel_of(shape)) {
    throw DimensionError("from_vector: " + std::to_string(values.size()) +
                         " values for shape " + shape_string(shape));
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->dtype = dtype_of<T>();
  impl->data = std::move(values);
  return Tensor(std::move(impl));
}

}  // namespace permstr::num
