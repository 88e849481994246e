#include "tmur/array.hpp"

#include <algorithm>
#include <cmath>

#include "tmur/errors.hpp"

namespace tmur {

DenseArray::DenseArray(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

DenseArray::DenseArray(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw ShapeError("DenseArray: " + std::to_string(data_.size()) + " values for shape (" + std::to_string(rows) +
                     ", " + std::to_string(cols) + ")");
  }
}

DenseArray::DenseArray(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw ShapeError("DenseArray: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseArray DenseArray::identity(std::size_t n) {
  DenseArray out(n, n);
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 1.0;
  return out;
}

void DenseArray::fill(double v) { std::fill(data_.begin(), data_.end(), v); }

bool DenseArray::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string DenseArray::shape_string() const {
  return "(" + std::to_string(rows_) + ", " + std::to_string(cols_) + ")";
}

void require_shape(const DenseArray& a, std::size_t rows, std::size_t cols, const char* what) {
  if (a.rows() != rows || a.cols() != cols) {
    throw ShapeError(std::string(what) + ": expected (" + std::to_string(rows) + ", " + std::to_string(cols) +
                     "), got " + a.shape_string());
  }
}

}  // namespace tmur
