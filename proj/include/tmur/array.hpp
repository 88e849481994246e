#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace tmur {

// Row-major matrix of doubles.
class DenseArray {
 public:
  DenseArray() = default;
  DenseArray(std::size_t rows, std::size_t cols, double fill = 0.0);
  DenseArray(std::size_t rows, std::size_t cols, std::vector<double> data);
  // Nested-list literal, e.g. DenseArray{{1, 2}, {3, 4}}.
  DenseArray(std::initializer_list<std::initializer_list<double>> rows);

  static DenseArray identity(std::size_t n);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  void fill(double v);
  bool same_shape(const DenseArray& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  bool all_finite() const noexcept;
  std::string shape_string() const;

  bool operator==(const DenseArray& other) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Throws ShapeError mentioning `what` if shapes differ.
void require_shape(const DenseArray& a, std::size_t rows, std::size_t cols, const char* what);

}  // namespace tmur
