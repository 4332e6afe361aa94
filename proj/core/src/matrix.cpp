#include "tarec/matrix.hpp"

#include <cmath>
#include <string>

#include "tarec/error.hpp"

namespace tarec {

namespace {

std::string shape_str(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw ShapeError("matrix data size " + std::to_string(data_.size()) + " does not match " +
                     std::to_string(rows_) + "x" + std::to_string(cols_));
  }
}

Matrix Matrix::row(std::initializer_list<double> values) {
  return Matrix(1, values.size(), std::vector<double>(values));
}

Matrix Matrix::row(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

void Matrix::fill(double v) {
  for (auto& x : data_) x = v;
}

bool Matrix::all_finite() const noexcept {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void matmul(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + shape_str(a) + " * " + shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (out.rows() != m || out.cols() != n) out = Matrix(m, n);
  else out.fill(0.0);
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      const double* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_at_b_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  // a: m x k, b: m x n, out: k x n
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_at_b " + shape_str(a) + " / " + shape_str(b));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = pb + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      if (av == 0.0) continue;
      double* orow = po + p * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_a_bt_acc(const Matrix& a, const Matrix& b, Matrix& out) {
  // a: m x n, b: k x n, out: m x k
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
    throw ShapeError("matmul_a_bt " + shape_str(a) + " / " + shape_str(b));
  }
  const std::size_t m = a.rows(), n = a.cols(), k = b.rows();
  std::vector<double> bt(n * k);
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = b(p, j);
  }
  const double* pa = a.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    double* orow = po + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double av = pa[i * n + j];
      if (av == 0.0) continue;
      const double* brow = bt.data() + j * k;
      for (std::size_t p = 0; p < k; ++p) orow[p] += av * brow[p];
    }
  }
}

Matrix operator+(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("add " + shape_str(a) + " + " + shape_str(b));
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

Matrix operator-(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) throw ShapeError("sub " + shape_str(a) + " - " + shape_str(b));
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

Matrix operator*(double s, const Matrix& a) {
  Matrix out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("dot size mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double squared_norm(std::span<const double> a) { return dot(a, a); }

double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

double cosine(std::span<const double> a, std::span<const double> b) {
  const double na = norm(a), nb = norm(b);
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot(a, b) / (na * nb);
}

}  // namespace tarec
