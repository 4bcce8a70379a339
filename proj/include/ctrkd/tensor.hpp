#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctrkd {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Raised for incompatible operand shapes, bad axes, and similar misuse.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Dense row-major array of doubles with an optional gradient buffer.
//
// Tensor is a handle: copies share storage. Use clone() or detach() for an
// independent copy. A rank-0 tensor (empty shape) holds a single scalar.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> values);
  // A trainable leaf: requires_grad is set and a zeroed grad buffer is attached.
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl().shape; }
  std::size_t rank() const { return impl().shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return impl().values.size(); }

  std::span<double> values() { return impl().values; }
  std::span<const double> values() const { return impl().values; }
  double item() const;
  double operator[](std::size_t i) const { return impl().values[i]; }

  bool requires_grad() const { return impl().requires_grad; }
  void set_requires_grad(bool flag) { impl().requires_grad = flag; }

  bool has_grad() const { return !impl().grad.empty() || impl().values.empty(); }
  std::span<double> grad() { return impl().grad; }
  std::span<const double> grad() const { return impl().grad; }
  // Allocates a zeroed grad buffer if none is present.
  void ensure_grad();
  void zero_grad();
  void drop_grad() { impl().grad.clear(); }

  // Shares nothing with *this and carries no gradient history.
  Tensor detach() const;
  // Independent copy that keeps requires_grad and any grad buffer.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };

  Impl& impl() {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
  }
  const Impl& impl() const {
    if (!impl_) throw std::logic_error("use of undefined tensor");
    return *impl_;
  }

  std::shared_ptr<Impl> impl_;
};

}  // namespace ctrkd
