#include <doctest.h>

#include "emcid/matrix.hpp"
#include "emcid/rng.hpp"

using namespace emcid;

namespace {

Matrix random_spd(int n, Rng& rng) {
  const Matrix m = rng.normal_matrix(n, n);
  Matrix a = matmul_tn(m, m);
  for (int i = 0; i < n; ++i) a(i, i) += 1.0;
  return a;
}

}  // namespace

TEST_CASE("matrix constructor enforces shape invariant") {
  CHECK_THROWS_AS(Matrix(2, 3, {1.0, 2.0}), DimensionMismatch);
  CHECK_THROWS_AS(Matrix::from_values(1, 2, {1.0, std::nan("")}), NonFiniteValue);
  const Matrix m = Matrix::from_values(2, 2, {1, 2, 3, 4});
  CHECK(m(1, 0) == 3.0);
}

TEST_CASE("matmul variants agree with transposition") {
  Rng rng(7);
  const Matrix a = rng.normal_matrix(4, 6);
  const Matrix b = rng.normal_matrix(6, 3);
  const Matrix c = matmul(a, b);
  CHECK(frobenius_norm(sub(c, matmul_nt(a, b.transposed()))) < 1e-14);
  CHECK(frobenius_norm(sub(c, matmul_tn(a.transposed(), b))) < 1e-14);
}

TEST_CASE("solve_spd identity returns rhs") {
  Rng rng(1);
  const Matrix b = rng.normal_matrix(3, 2);
  const Matrix x = solve_spd(Matrix::identity(3), b);
  CHECK(frobenius_norm(sub(x, b)) < 1e-14);
}

TEST_CASE("solve_spd diagonal case") {
  const Matrix a = Matrix::from_values(2, 2, {2, 0, 0, 4});
  const Matrix b = Matrix::from_values(2, 1, {2, 4});
  const Matrix x = solve_spd(a, b);
  CHECK(x(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(x(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("solve_spd random SPD residual oracle") {
  Rng rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + int(rng.below(8));
    const int m = 1 + int(rng.below(4));
    const Matrix a = random_spd(n, rng);
    const Matrix b = rng.normal_matrix(n, m);
    const Matrix x = solve_spd(a, b);
    const double resid = frobenius_norm(sub(matmul(a, x), b));
    CHECK(resid <= 1e-8 * (1.0 + frobenius_norm(b)));
    if (n == 5) CHECK(resid <= 1e-10);
  }
}

TEST_CASE("cholesky rejects non-PD and asymmetric input") {
  const Matrix neg = Matrix::from_values(2, 2, {1, 0, 0, -1});
  CHECK_THROWS_AS(cholesky(neg), NotPositiveDefinite);
  const Matrix asym = Matrix::from_values(2, 2, {1, 0.5, 0.0, 1});
  CHECK_THROWS_AS(cholesky(asym), NotPositiveDefinite);
  CHECK_THROWS_AS(solve_spd(Matrix::identity(3), Matrix(2, 2)), DimensionMismatch);
}

TEST_CASE("solve_general cross-checks solve_spd") {
  Rng rng(9);
  const Matrix a = random_spd(6, rng);
  const Matrix b = rng.normal_matrix(6, 2);
  const Matrix x1 = solve_spd(a, b);
  const Matrix x2 = solve_general(a, b);
  CHECK(frobenius_norm(sub(x1, x2)) < 1e-9);
}

TEST_CASE("rng determinism and split independence") {
  Rng a(123), b(123);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng parent(5);
  Rng c1 = parent.split(1), c2 = parent.split(2);
  CHECK(c1.next_u64() != c2.next_u64());
  // Same tag, same stream.
  Rng c1b = parent.split(1);
  CHECK(c1b.next_u64() == Rng(parent.seed()).split(1).next_u64());
}

TEST_CASE("rng normal moments") {
  Rng rng(2024);
  double sum = 0.0, sum_sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double x = rng.normal();
    sum += x;
    sum_sq += x * x;
  }
  CHECK(std::abs(sum / n) < 0.03);
  CHECK(std::abs(sum_sq / n - 1.0) < 0.05);
}
