#include "qilcm/tensor.hpp"

#include <cmath>
#include <sstream>

#include "qilcm/errors.hpp"

namespace qilcm::diff {

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void check_finite(const std::vector<double>& values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw DomainError("tensor creation rejected non-finite value " +
                        std::to_string(v));
    }
  }
}

}  // namespace

Tensor::Tensor() : Tensor({}, {0.0}) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values)
    : shape_(std::move(shape)) {
  if (shape_.size() > 2) {
    throw DimensionError("tensor rank " + std::to_string(shape_.size()) +
                         " not supported (max 2)");
  }
  if (shape_numel(shape_) != values.size()) {
    throw DimensionError("shape " + shape_str() + " expects " +
                         std::to_string(shape_numel(shape_)) +
                         " values, got " + std::to_string(values.size()));
  }
  check_finite(values);
  values_ = std::make_shared<const std::vector<double>>(std::move(values));
}

Tensor Tensor::scalar(double v) { return Tensor({}, {v}); }

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  std::vector<double> v(shape_numel(shape), 0.0);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  std::vector<double> v(shape_numel(shape), value);
  return Tensor(std::move(shape), std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::vector(std::vector<double> values) {
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

std::size_t Tensor::rows() const {
  return shape_.size() == 2 ? shape_[0] : 1;
}

std::size_t Tensor::cols() const {
  if (shape_.empty()) return 1;
  return shape_.back();
}

double Tensor::item() const {
  if (numel() != 1) {
    throw DomainError("item() requires a one-element tensor, shape is " +
                      shape_str());
  }
  return (*values_)[0];
}

bool Tensor::equals(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return *values_ == *other.values_;
}

double Tensor::max_abs_diff(const Tensor& other) const {
  if (shape_ != other.shape_) {
    throw DimensionError("max_abs_diff shape mismatch: " + shape_str() +
                         " vs " + other.shape_str());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < numel(); ++i) {
    m = std::max(m, std::abs(at(i) - other.at(i)));
  }
  return m;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << '[';
  if (shape_.empty()) os << "scalar";
  for (std::size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << 'x';
    os << shape_[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape();
}

}  // namespace qilcm::diff
