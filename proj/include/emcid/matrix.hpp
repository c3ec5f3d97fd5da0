#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "emcid/errors.hpp"

namespace emcid {

// Dense row-major matrix of 64-bit floats. The whole pipeline runs in
// double precision; the oracle tolerances (1e-8 .. 1e-12) rule out floats.
class Matrix {
 public:
  Matrix() = default;
  Matrix(int rows, int cols) : rows_(rows), cols_(cols), data_(size_t(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) throw DimensionMismatch("negative matrix dimension");
  }
  Matrix(int rows, int cols, std::vector<double> data);

  // Checked entry point: rejects NaN/Inf.
  static Matrix from_values(int rows, int cols, std::initializer_list<double> vals);
  static Matrix identity(int n);
  static Matrix row_vector(std::span<const double> vals);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(int r, int c) { return data_[size_t(r) * cols_ + c]; }
  double operator()(int r, int c) const { return data_[size_t(r) * cols_ + c]; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int r) { return data_.data() + size_t(r) * cols_; }
  const double* row(int r) const { return data_.data() + size_t(r) * cols_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool all_finite() const;

  Matrix transposed() const;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

bool operator==(const Matrix& a, const Matrix& b);

// Elementwise ops (shape-checked).
Matrix add(const Matrix& a, const Matrix& b);
Matrix sub(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& a, double s);
Matrix hadamard(const Matrix& a, const Matrix& b);

// C = A * B
Matrix matmul(const Matrix& a, const Matrix& b);
// C = A * B^T  (the workhorse for out-by-in weight layouts)
Matrix matmul_nt(const Matrix& a, const Matrix& b);
// C = A^T * B
Matrix matmul_tn(const Matrix& a, const Matrix& b);

// C += alpha * A * B and friends, accumulating in place.
void matmul_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha = 1.0);
void matmul_nt_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha = 1.0);
void matmul_tn_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha = 1.0);

double frobenius_norm(const Matrix& a);
double sum_squares(const Matrix& a);
double dot(const Matrix& a, const Matrix& b);

// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
// Throws NotPositiveDefinite when a pivot is <= 0 and DimensionMismatch /
// NotPositiveDefinite when A is not square or not symmetric within
// 1e-9 relative.
Matrix cholesky(const Matrix& a);

// Solves A X = B for SPD A via Cholesky. post: ||A X - B||_F <= 1e-8 (1 + ||B||_F).
Matrix solve_spd(const Matrix& a, const Matrix& b);

// Solves A X = B for general square A by Gauss-Jordan with partial pivoting.
// Kept as an independent route from solve_spd for oracle cross-checks.
Matrix solve_general(const Matrix& a, const Matrix& b);

}  // namespace emcid
