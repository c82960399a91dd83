#include "dcnas/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>

namespace dcnas {

namespace {

void validate_dims(const std::vector<int>& dims) {
  if (dims.size() != 4 && dims.size() != 5) {
    throw ShapeError("shape: rank must be 4 or 5, got " + std::to_string(dims.size()));
  }
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (dims[i] < 1) {
      throw ShapeError("shape: dim " + std::to_string(i) + " must be >= 1, got " +
                       std::to_string(dims[i]));
    }
  }
}

}  // namespace

Shape::Shape(std::initializer_list<int> dims) : dims_(dims) { validate_dims(dims_); }

Shape::Shape(std::vector<int> dims) : dims_(std::move(dims)) { validate_dims(dims_); }

std::size_t Shape::numel() const {
  if (dims_.empty()) return 0;
  std::size_t n = 1;
  for (int d : dims_) n *= static_cast<std::size_t>(d);
  return n;
}

std::string Shape::str() const {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) os << ',';
    os << dims_[i];
  }
  os << ')';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), values_(shape_.numel(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
  if (values_.size() != shape_.numel()) {
    throw ShapeError("tensor: " + std::to_string(values_.size()) + " values for shape " +
                     shape_.str());
  }
}

double& Tensor::at(int n, int c, int h, int w) {
  const auto& d = shape_.dims();
  return values_[((static_cast<std::size_t>(n) * d[1] + c) * d[2] + h) * d[3] + w];
}

double Tensor::at(int n, int c, int h, int w) const {
  const auto& d = shape_.dims();
  return values_[((static_cast<std::size_t>(n) * d[1] + c) * d[2] + h) * d[3] + w];
}

void Tensor::fill(double v) { std::fill(values_.begin(), values_.end(), v); }

Tensor Tensor::reshaped(Shape shape) const {
  if (shape.numel() != numel()) {
    throw ShapeError("reshape: " + shape_.str() + " -> " + shape.str() + " changes element count");
  }
  return Tensor(std::move(shape), values_);
}

std::uint64_t next_parameter_id() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1);
}

Parameter::Parameter(Tensor v, bool trainable) : value(std::move(v)), id_(next_parameter_id()) {
  set_trainable(trainable);
}

Parameter::Parameter(const Parameter& other)
    : value(other.value), grad(other.grad), id_(next_parameter_id()), trainable_(other.trainable_) {}

Parameter& Parameter::operator=(const Parameter& other) {
  if (this != &other) {
    value = other.value;
    grad = other.grad;
    trainable_ = other.trainable_;
  }
  return *this;
}

void Parameter::set_trainable(bool trainable) {
  trainable_ = trainable;
  if (trainable_) {
    if (grad.shape() != value.shape()) grad = Tensor(value.shape());
  } else {
    grad = Tensor();
  }
}

void Parameter::zero_grad() {
  if (trainable_) grad.fill(0.0);
}

}  // namespace dcnas
