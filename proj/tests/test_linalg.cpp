#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fedbnr/errors.hpp"
#include "fedbnr/linalg.hpp"
#include "fedbnr/rng.hpp"

using namespace fedbnr;

namespace {

Matrix random_spd(Rng& rng, Eigen::Index n) {
  Matrix m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      m(i, j) = rng.uniform(-1.0, 1.0);
    }
  }
  Matrix spd = gram(m);
  spd.diagonal().array() += 1.0;
  return spd;
}

}  // namespace

TEST_CASE("cholesky of a hand-expanded 2x2 matrix") {
  Matrix a(2, 2);
  a << 4, 2, 2, 3;
  const auto l = cholesky(a);
  CHECK(l.lower(0, 0) == doctest::Approx(2.0));
  CHECK(l.lower(1, 0) == doctest::Approx(1.0));
  CHECK(l.lower(1, 1) == doctest::Approx(std::sqrt(2.0)));
  CHECK(l.lower(0, 1) == 0.0);
}

TEST_CASE("cholesky of the identity is the identity") {
  const Matrix eye = Matrix::Identity(5, 5);
  const auto l = cholesky(eye);
  CHECK((l.lower - eye).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("cholesky rejects an indefinite matrix") {
  Matrix a(2, 2);
  a << 1, 2, 2, 1;  // eigenvalues 3, -1
  CHECK_THROWS_AS(cholesky(a), NotPositiveDefinite);
}

TEST_CASE("cholesky rejects non-square and asymmetric input") {
  CHECK_THROWS_AS(cholesky(Matrix::Zero(2, 3)), DimensionMismatch);
  Matrix a(2, 2);
  a << 1, 0.5, 0, 1;
  CHECK_THROWS_AS(cholesky(a), std::invalid_argument);
}

TEST_CASE("solve_psd with the identity factor returns the rhs") {
  const auto l = cholesky(Matrix::Identity(3, 3));
  Matrix b(3, 2);
  b << 1, 2, 3, 4, 5, 6;
  CHECK((solve_psd(l, b) - b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("solve_psd solves the hand-worked 2x2 system") {
  Matrix a(2, 2);
  a << 4, 2, 2, 3;
  const auto l = cholesky(a);
  Vector b(2);
  b << 1, 1;
  const Vector x = solve_psd(l, b);
  CHECK(x[0] == doctest::Approx(0.125).epsilon(1e-12));
  CHECK(x[1] == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("solve_psd rejects mismatched rhs") {
  const auto l = cholesky(Matrix::Identity(2, 2));
  CHECK_THROWS_AS(solve_psd(l, Matrix(Matrix::Zero(3, 1))), DimensionMismatch);
}

TEST_CASE("logdet examples") {
  CHECK(logdet(cholesky(Matrix::Identity(4, 4))) == 0.0);

  Matrix a(2, 2);
  a << 4, 2, 2, 3;  // det = 8
  CHECK(logdet(cholesky(a)) == doctest::Approx(std::log(8.0)).epsilon(1e-12));

  const double e2 = std::exp(2.0);
  Matrix d = Matrix::Zero(2, 2);
  d.diagonal().setConstant(e2);
  CHECK(logdet(cholesky(d)) == doctest::Approx(4.0).epsilon(1e-12));
}

TEST_CASE("factor reconstructs random SPD matrices") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(12));
    const Matrix a = random_spd(rng, n);
    const auto l = cholesky(a);
    const Matrix rec = l.lower * l.lower.transpose();
    const double rel =
        (rec - a).cwiseAbs().maxCoeff() / a.cwiseAbs().maxCoeff();
    CHECK(rel < 1e-10);
    CHECK(l.lower.diagonal().minCoeff() > 0.0);
  }
}

TEST_CASE("solve_psd(cholesky(A), A x) recovers x") {
  Rng rng(8);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_index(10));
    const Matrix a = random_spd(rng, n);
    Vector x(n);
    for (Eigen::Index i = 0; i < n; ++i) x[i] = rng.uniform(-2.0, 2.0);
    const Vector rec = solve_psd(cholesky(a), Vector(a * x));
    CHECK((rec - x).norm() / x.norm() < 1e-8);
  }
}

TEST_CASE("gram products are exactly symmetric") {
  Rng rng(9);
  Matrix m(6, 11);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = rng.uniform(-3.0, 3.0);
  }
  CHECK(symmetry_gap(gram(m)) == 0.0);
}
