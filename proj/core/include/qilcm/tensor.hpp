#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace qilcm::diff {

/// Dense row-major tensor of 64-bit floats. Values are immutable after
/// construction and shared between copies, so a Tensor is safe to read
/// from any number of threads. Rank 0 (scalar), 1 (vector) and 2 (matrix)
/// are supported; NaN/Inf are rejected at creation.
class Tensor {
 public:
  Tensor();  // scalar 0
  Tensor(std::vector<std::size_t> shape, std::vector<double> values);

  static Tensor scalar(double v);
  static Tensor zeros(std::vector<std::size_t> shape);
  static Tensor full(std::vector<std::size_t> shape, double v);
  /// Row-major matrix constructor.
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values);
  static Tensor vector(std::vector<double> values);

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t numel() const { return values_->size(); }
  bool is_scalar() const { return numel() == 1; }

  /// Rows/cols of a rank-2 tensor (rank-1 counts as a single row).
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const { return {values_->data(), values_->size()}; }
  double at(std::size_t i) const { return (*values_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*values_)[r * cols() + c]; }
  /// Value of a one-element tensor.
  double item() const;

  /// Same shape and bitwise-equal values.
  bool equals(const Tensor& other) const;
  /// Max absolute elementwise difference; throws on shape mismatch.
  double max_abs_diff(const Tensor& other) const;

  /// "[2x3]"-style shape string for diagnostics.
  std::string shape_str() const;

 private:
  std::vector<std::size_t> shape_;
  std::shared_ptr<const std::vector<double>> values_;
};

/// Shape equality helper for op preconditions.
bool same_shape(const Tensor& a, const Tensor& b);

}  // namespace qilcm::diff
