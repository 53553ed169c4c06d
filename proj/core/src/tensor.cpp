#include "handocc/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "handocc/error.hpp"

namespace handocc {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream out;
  out << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out << 'x';
    out << shape[i];
  }
  out << ']';
  return out.str();
}

namespace {

void validate_shape(const Shape& shape) {
  if (shape.empty()) throw DimensionError("tensor shape must have rank >= 1");
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimension must be positive, got " + shape_to_string(shape));
  }
}

}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  validate_shape(shape_);
  data_.assign(shape_numel(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  validate_shape(shape_);
  if (shape_numel(shape_) != data_.size()) {
    throw DimensionError("shape " + shape_to_string(shape_) + " does not match " +
                         std::to_string(data_.size()) + " values");
  }
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r ? rows.begin()->size() : 0;
  std::vector<double> values;
  values.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(values));
}

Tensor Tensor::vector(std::initializer_list<double> values) {
  return Tensor({values.size()}, std::vector<double>(values));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, std::vector<double>{value}); }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw DimensionError("axis out of range for " + shape_to_string(shape_));
  return shape_[axis];
}

double& Tensor::at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
double Tensor::at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

Tensor Tensor::reshaped(Shape shape) const& {
  Tensor copy = *this;
  return std::move(copy).reshaped(std::move(shape));
}

Tensor Tensor::reshaped(Shape shape) && {
  validate_shape(shape);
  if (shape_numel(shape) != data_.size()) {
    throw DimensionError("cannot reshape " + shape_to_string(shape_) + " to " + shape_to_string(shape));
  }
  shape_ = std::move(shape);
  return std::move(*this);
}

double Tensor::sum() const noexcept { return std::accumulate(data_.begin(), data_.end(), 0.0); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void Tensor::check_finite(std::string_view where) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i])) {
      throw NumericError(std::string(where) + ": non-finite value " + std::to_string(data_[i]) +
                         " at flat index " + std::to_string(i) + " of " + shape_to_string(shape_));
    }
  }
}

void Tensor::fill(double value) noexcept { std::fill(data_.begin(), data_.end(), value); }

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: " + shape_to_string(a.shape()) + " vs " + shape_to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace handocc
