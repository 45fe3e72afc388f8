#include "rldc/tensor.hpp"

#include <algorithm>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace rldc {

std::size_t shape_numel(const Shape& shape) noexcept {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)),
      values_(shape_numel(shape_), fill),
      grad_(values_.size(), 0.0) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(values.begin(), values.end()) {
  if (values_.size() != shape_numel(shape_)) {
    throw std::invalid_argument("tensor: " + std::to_string(values_.size()) +
                                " values do not fill shape " + shape_string(shape_));
  }
  grad_.assign(values_.size(), 0.0);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw std::out_of_range("tensor: axis " + std::to_string(axis) + " out of range for shape " +
                            shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw std::out_of_range("tensor: index rank " + std::to_string(index.size()) +
                            " does not match shape " + shape_string(shape_));
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw std::out_of_range("tensor: index " + std::to_string(i) + " out of range on axis " +
                              std::to_string(axis));
    }
    flat = flat * shape_[axis] + i;
    ++axis;
  }
  return flat;
}

double& Tensor::at(std::initializer_list<std::size_t> index) { return values_[offset(index)]; }

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return values_[offset(index)];
}

void Tensor::zero_grad() noexcept { std::fill(grad_.begin(), grad_.end(), 0.0); }

void Tensor::fill(double value) noexcept { std::fill(values_.begin(), values_.end(), value); }

void Tensor::resize(const Shape& shape) {
  if (shape != shape_) {
    shape_ = shape;
    values_.resize(shape_numel(shape_));
    grad_.resize(values_.size());
  }
  zero_grad();
}

void Tensor::reshape(Shape shape) {
  if (shape_numel(shape) != values_.size()) {
    throw std::invalid_argument("tensor: cannot reshape " + shape_string(shape_) + " to " +
                                shape_string(shape));
  }
  shape_ = std::move(shape);
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor copy = *this;
  copy.reshape(std::move(shape));
  return copy;
}

}  // namespace rldc
