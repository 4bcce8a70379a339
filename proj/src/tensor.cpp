#include "ctrkd/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace ctrkd {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<Impl>()) {
  impl_->values.assign(shape_size(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values) : impl_(std::make_shared<Impl>()) {
  if (values.size() != shape_size(shape)) {
    throw DimensionError("tensor of shape " + shape_string(shape) + " given " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->values = std::move(values);
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  Tensor t(std::move(shape), std::move(values));
  t.set_requires_grad(true);
  t.ensure_grad();
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_string(shape()));
  }
  return shape()[axis];
}

double Tensor::item() const {
  if (size() != 1) throw DimensionError("item() on tensor of shape " + shape_string(shape()));
  return impl().values[0];
}

void Tensor::ensure_grad() {
  auto& im = impl();
  if (im.grad.size() != im.values.size()) im.grad.assign(im.values.size(), 0.0);
}

void Tensor::zero_grad() {
  auto& g = impl().grad;
  std::fill(g.begin(), g.end(), 0.0);
}

Tensor Tensor::detach() const { return Tensor(shape(), impl().values); }

Tensor Tensor::clone() const {
  Tensor t(shape(), impl().values);
  t.impl_->requires_grad = impl().requires_grad;
  t.impl_->grad = impl().grad;
  return t;
}

}  // namespace ctrkd
