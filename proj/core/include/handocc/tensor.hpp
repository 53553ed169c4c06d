#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace handocc {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major tensor of doubles.
///
/// Invariant: product(shape) == data.size() and every dimension is positive.
/// Value semantics: copies are deep.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  /// 2-D tensor from nested rows, e.g. `Tensor::matrix({{1, 2}, {3, 4}})`.
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor vector(std::initializer_list<double> values);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  double* raw() noexcept { return data_.data(); }
  const double* raw() const noexcept { return data_.data(); }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Row-major 2-D access; requires rank 2.
  double& at(std::size_t r, std::size_t c);
  double at(std::size_t r, std::size_t c) const;
  /// Row-major 3-D access; requires rank 3.
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  /// Same data, new shape; element counts must match.
  Tensor reshaped(Shape shape) const&;
  Tensor reshaped(Shape shape) &&;

  /// Sum of all elements.
  double sum() const noexcept;
  /// Throws NumericError naming `where` if any element is NaN or Inf.
  void check_finite(std::string_view where) const;
  bool all_finite() const noexcept;

  void fill(double value) noexcept;

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Largest absolute elementwise difference; shapes must match.
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace handocc
