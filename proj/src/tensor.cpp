#include "m2cnn/tensor.hpp"

#include <fmt/format.h>

#include "m2cnn/error.hpp"

namespace m2cnn {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto extent : shape) n *= extent;
  return n;
}

std::string shape_string(const Shape& shape) {
  return fmt::format("[{}]", fmt::join(shape, ","));
}

namespace {

void check_extents(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have at least one axis");
  for (auto extent : shape) {
    if (extent == 0) {
      throw DimensionError(fmt::format("tensor extents must be positive, got {}", shape_string(shape)));
    }
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_extents(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  check_extents(shape_);
  if (data_.size() != shape_size(shape_)) {
    throw DimensionError(fmt::format("shape {} needs {} elements, got {}", shape_string(shape_),
                                     shape_size(shape_), data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw DimensionError(fmt::format("axis {} out of range for shape {}", axis, shape_string(shape_)));
  }
  return shape_[axis];
}

double Tensor::item() const {
  if (data_.size() != 1) {
    throw ContractError(fmt::format("item() on tensor of shape {}", shape_string(shape_)));
  }
  return data_[0];
}

std::span<double> Tensor::grad() {
  if (!grad_) throw ContractError("tensor has no gradient");
  return *grad_;
}

std::span<const double> Tensor::grad() const {
  if (!grad_) throw ContractError("tensor has no gradient");
  return *grad_;
}

std::span<double> Tensor::ensure_grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out(std::move(shape), data_);
  return out;
}

}  // namespace m2cnn
