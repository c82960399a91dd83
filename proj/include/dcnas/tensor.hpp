#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcnas {

/// Base of every error thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Incompatible tensor shapes; the message names the op and the offending dimension.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Dimensions of a rank-4 (N,C,H,W) or rank-5 (N,C,D,H,W) array.
class Shape {
 public:
  Shape() = default;
  Shape(std::initializer_list<int> dims);
  explicit Shape(std::vector<int> dims);

  int rank() const { return static_cast<int>(dims_.size()); }
  int operator[](int axis) const { return dims_.at(static_cast<std::size_t>(axis)); }
  const std::vector<int>& dims() const { return dims_; }
  std::size_t numel() const;
  std::string str() const;

  bool operator==(const Shape&) const = default;

 private:
  std::vector<int> dims_;
};

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1, 1, 1, 1}, v); }

  const Shape& shape() const { return shape_; }
  std::size_t numel() const { return values_.size(); }
  int dim(int axis) const { return shape_[axis]; }

  double* data() { return values_.data(); }
  const double* data() const { return values_.data(); }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }

  // rank-4 accessor
  double& at(int n, int c, int h, int w);
  double at(int n, int c, int h, int w) const;

  void fill(double v);
  /// Same values, new dims; element counts must agree.
  Tensor reshaped(Shape shape) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_;
  std::vector<double> values_;
};

/// A named, optionally trainable tensor owned by a network module.
class Parameter {
 public:
  Parameter() : Parameter(Tensor(Shape{1, 1, 1, 1})) {}
  explicit Parameter(Tensor value, bool trainable = true);

  Parameter(const Parameter& other);
  Parameter& operator=(const Parameter& other);
  Parameter(Parameter&&) noexcept = default;
  Parameter& operator=(Parameter&&) noexcept = default;

  std::uint64_t id() const { return id_; }
  bool trainable() const { return trainable_; }
  /// Allocates or releases the gradient buffer.
  void set_trainable(bool trainable);
  void zero_grad();

  Tensor value;
  Tensor grad;  // empty unless trainable

 private:
  std::uint64_t id_ = 0;
  bool trainable_ = true;
};

std::uint64_t next_parameter_id();

}  // namespace dcnas
