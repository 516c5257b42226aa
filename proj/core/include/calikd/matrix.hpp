#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace calikd {

/// Dense row-major matrix of doubles. Value type; all shape checks throw
/// ShapeError.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  std::span<double> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const double> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool all_finite() const;

  bool operator==(const Matrix&) const = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// C = A * B. A is n x k, B is k x m.
Matrix matmul(const Matrix& a, const Matrix& b);

/// C = A * B^T. A is n x k, B is m x k.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// C = A^T * B. A is k x n, B is k x m.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

/// Gather the given rows of `src` into a new matrix, in order.
Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices);

}  // namespace calikd
