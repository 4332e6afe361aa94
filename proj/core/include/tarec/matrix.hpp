#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

namespace tarec {

/// Dense row-major matrix of doubles. A vector is a 1 x n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix row(std::initializer_list<double> values);
  static Matrix row(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> row_span(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row_span(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  bool same_shape(const Matrix& other) const noexcept {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }
  void fill(double v);
  bool all_finite() const noexcept;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// out = a * b
void matmul(const Matrix& a, const Matrix& b, Matrix& out);
// out += a^T * b
void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out);
// out += a * b^T
void matmul_a_bt_acc(const Matrix& a, const Matrix& b, Matrix& out);

Matrix operator+(const Matrix& a, const Matrix& b);
Matrix operator-(const Matrix& a, const Matrix& b);
Matrix operator*(double s, const Matrix& a);

double dot(std::span<const double> a, std::span<const double> b);
double squared_norm(std::span<const double> a);
double norm(std::span<const double> a);
/// Cosine similarity; 0 when either vector is zero.
double cosine(std::span<const double> a, std::span<const double> b);

}  // namespace tarec
