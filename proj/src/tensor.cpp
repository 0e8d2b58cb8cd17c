#include "fedlwr/tensor.hpp"

#include <cmath>
#include <sstream>

#include "fedlwr/errors.hpp"

namespace fedlwr {

std::size_t shape_size(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape s, double fill) : shape(std::move(s)), data(shape_size(shape), fill) {}

Tensor::Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
  if (shape_size(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_string(shape) + " holds " +
                     std::to_string(shape_size(shape)) + " values, got " +
                     std::to_string(data.size()));
  }
}

bool all_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_finite(const Tensor& t, std::string_view what) {
  if (!all_finite(t.data)) throw NumericError("non-finite value in " + std::string(what));
}

void require_same_shape(const Tensor& a, const Tensor& b, std::string_view what) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(what) + ": shape " + shape_string(a.shape) + " vs " +
                     shape_string(b.shape));
  }
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw ShapeError("matrix " + std::to_string(rows_) + "x" + std::to_string(cols_) +
                     " needs " + std::to_string(rows_ * cols_) + " values, got " +
                     std::to_string(values_.size()));
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ ? rows.begin()->size() : 0;
  values_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("ragged matrix literal");
    values_.insert(values_.end(), r.begin(), r.end());
  }
}

}  // namespace fedlwr
