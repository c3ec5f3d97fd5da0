#include "emcid/matrix.hpp"

#include <cmath>
#include <cstring>
#include <string>

namespace emcid {

Matrix::Matrix(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (size_t(rows) * cols != data_.size())
    throw DimensionMismatch("rows*cols != len(data): " + std::to_string(rows) + "x" +
                            std::to_string(cols) + " vs " + std::to_string(data_.size()));
}

Matrix Matrix::from_values(int rows, int cols, std::initializer_list<double> vals) {
  Matrix m(rows, cols, std::vector<double>(vals));
  if (!m.all_finite()) throw NonFiniteValue("matrix entries must be finite");
  return m;
}

Matrix Matrix::identity(int n) {
  Matrix m(n, n);
  for (int i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> vals) {
  return Matrix(1, int(vals.size()), std::vector<double>(vals.begin(), vals.end()));
}

bool Matrix::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (int r = 0; r < rows_; ++r)
    for (int c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  return t;
}

bool operator==(const Matrix& a, const Matrix& b) {
  if (!a.same_shape(b)) return false;
  return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

static void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionMismatch(std::string(op) + ": " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
}

Matrix add(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "add");
  Matrix c = a;
  double* cd = c.data();
  const double* bd = b.data();
  for (size_t i = 0; i < c.size(); ++i) cd[i] += bd[i];
  return c;
}

Matrix sub(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "sub");
  Matrix c = a;
  double* cd = c.data();
  const double* bd = b.data();
  for (size_t i = 0; i < c.size(); ++i) cd[i] -= bd[i];
  return c;
}

Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  double* cd = c.data();
  for (size_t i = 0; i < c.size(); ++i) cd[i] *= s;
  return c;
}

Matrix hadamard(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "hadamard");
  Matrix c = a;
  double* cd = c.data();
  const double* bd = b.data();
  for (size_t i = 0; i < c.size(); ++i) cd[i] *= bd[i];
  return c;
}

void matmul_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha) {
  if (a.cols() != b.rows() || c.rows() != a.rows() || c.cols() != b.cols())
    throw DimensionMismatch("matmul: " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                            " * " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  const int n = a.rows(), k = a.cols(), m = b.cols();
  for (int i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = alpha * ai[p];
      const double* bp = b.row(p);
      for (int j = 0; j < m; ++j) ci[j] += aip * bp[j];
    }
  }
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.cols());
  matmul_acc(c, a, b);
  return c;
}

void matmul_nt_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha) {
  if (a.cols() != b.cols() || c.rows() != a.rows() || c.cols() != b.rows())
    throw DimensionMismatch("matmul_nt: " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + " * (" + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()) + ")^T");
  const int n = a.rows(), k = a.cols(), m = b.rows();
  for (int i = 0; i < n; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int j = 0; j < m; ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] += alpha * s;
    }
  }
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  Matrix c(a.rows(), b.rows());
  matmul_nt_acc(c, a, b);
  return c;
}

void matmul_tn_acc(Matrix& c, const Matrix& a, const Matrix& b, double alpha) {
  if (a.rows() != b.rows() || c.rows() != a.cols() || c.cols() != b.cols())
    throw DimensionMismatch("matmul_tn: (" + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ")^T * " + std::to_string(b.rows()) + "x" +
                            std::to_string(b.cols()));
  const int n = a.cols(), k = a.rows(), m = b.cols();
  for (int p = 0; p < k; ++p) {
    const double* ap = a.row(p);
    const double* bp = b.row(p);
    for (int i = 0; i < n; ++i) {
      const double api = alpha * ap[i];
      double* ci = c.row(i);
      for (int j = 0; j < m; ++j) ci[j] += api * bp[j];
    }
  }
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  Matrix c(a.cols(), b.cols());
  matmul_tn_acc(c, a, b);
  return c;
}

double sum_squares(const Matrix& a) {
  double s = 0.0;
  const double* d = a.data();
  for (size_t i = 0; i < a.size(); ++i) s += d[i] * d[i];
  return s;
}

double frobenius_norm(const Matrix& a) { return std::sqrt(sum_squares(a)); }

double dot(const Matrix& a, const Matrix& b) {
  check_same_shape(a, b, "dot");
  double s = 0.0;
  const double* ad = a.data();
  const double* bd = b.data();
  for (size_t i = 0; i < a.size(); ++i) s += ad[i] * bd[i];
  return s;
}

Matrix cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) throw DimensionMismatch("cholesky: matrix not square");
  const int n = a.rows();
  double max_abs = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) max_abs = std::max(max_abs, std::abs(a(i, j)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (std::abs(a(i, j) - a(j, i)) > 1e-9 * (1.0 + max_abs))
        throw NotPositiveDefinite("matrix not symmetric within 1e-9 relative");

  Matrix l(n, n);
  for (int j = 0; j < n; ++j) {
    double d = a(j, j);
    const double* lj = l.row(j);
    for (int p = 0; p < j; ++p) d -= lj[p] * lj[p];
    if (!(d > 0.0))
      throw NotPositiveDefinite("pivot " + std::to_string(d) + " at column " + std::to_string(j));
    const double ljj = std::sqrt(d);
    l(j, j) = ljj;
    for (int i = j + 1; i < n; ++i) {
      const double* li = l.row(i);
      double s = a(i, j);
      for (int p = 0; p < j; ++p) s -= li[p] * lj[p];
      l(i, j) = s / ljj;
    }
  }
  return l;
}

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionMismatch("solve_spd: A is " + std::to_string(a.rows()) + "x" +
                            std::to_string(a.cols()) + ", B has " + std::to_string(b.rows()) +
                            " rows");
  const Matrix l = cholesky(a);
  const int n = a.rows(), m = b.cols();
  // L Y = B, forward substitution, column blocks handled row-wise.
  Matrix y(n, m);
  for (int i = 0; i < n; ++i) {
    const double* li = l.row(i);
    double* yi = y.row(i);
    for (int j = 0; j < m; ++j) yi[j] = b(i, j);
    for (int p = 0; p < i; ++p) {
      const double lip = li[p];
      const double* yp = y.row(p);
      for (int j = 0; j < m; ++j) yi[j] -= lip * yp[j];
    }
    for (int j = 0; j < m; ++j) yi[j] /= li[i];
  }
  // L^T X = Y, backward substitution.
  Matrix x(n, m);
  for (int i = n - 1; i >= 0; --i) {
    double* xi = x.row(i);
    const double* yi = y.row(i);
    for (int j = 0; j < m; ++j) xi[j] = yi[j];
    for (int p = i + 1; p < n; ++p) {
      const double lpi = l(p, i);
      const double* xp = x.row(p);
      for (int j = 0; j < m; ++j) xi[j] -= lpi * xp[j];
    }
    const double lii = l(i, i);
    for (int j = 0; j < m; ++j) xi[j] /= lii;
  }
  return x;
}

Matrix solve_general(const Matrix& a, const Matrix& b) {
  if (a.rows() != a.cols()) throw DimensionMismatch("solve_general: matrix not square");
  if (a.rows() != b.rows()) throw DimensionMismatch("solve_general: rhs rows mismatch");
  const int n = a.rows(), m = b.cols();
  Matrix u = a;
  Matrix x = b;
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(u(r, col)) > std::abs(u(piv, col))) piv = r;
    if (u(piv, col) == 0.0) throw NotPositiveDefinite("singular matrix in solve_general");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(u(piv, c), u(col, c));
      for (int c = 0; c < m; ++c) std::swap(x(piv, c), x(col, c));
    }
    const double inv = 1.0 / u(col, col);
    for (int c = col; c < n; ++c) u(col, c) *= inv;
    for (int c = 0; c < m; ++c) x(col, c) *= inv;
    for (int r = 0; r < n; ++r) {
      if (r == col) continue;
      const double f = u(r, col);
      if (f == 0.0) continue;
      for (int c = col; c < n; ++c) u(r, c) -= f * u(col, c);
      for (int c = 0; c < m; ++c) x(r, c) -= f * x(col, c);
    }
  }
  return x;
}

}  // namespace emcid
