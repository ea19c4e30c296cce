#pragma once

#include <cstddef>
#include <initializer_list>
#include <vector>

namespace callseq {

// Dense row-major matrix of doubles. All model math runs in 64-bit floats so
// analytic gradients can be checked against central differences at tight
// tolerances. Values are plain data: copying is deep, instances are safe to
// share across threads once constructed.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Standard product with accumulation in double. Throws ShapeError naming both
// shapes when a.cols != b.rows.
Matrix matmul(const Matrix& a, const Matrix& b);

// out = a^T * b without materializing the transpose (a: k x m, b: k x n).
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// out = a * b^T without materializing the transpose (a: m x k, b: n x k).
Matrix matmul_nt(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);

void add_inplace(Matrix& a, const Matrix& b);
void scale_inplace(Matrix& a, double s);

}  // namespace callseq
