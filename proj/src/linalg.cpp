#include "fedbnr/linalg.hpp"

#include <cmath>

namespace fedbnr {

CholeskyFactor cholesky(const Matrix& a) {
  if (a.rows() != a.cols()) {
    throw DimensionMismatch("cholesky: matrix must be square");
  }
  const double gap = symmetry_gap(a);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if (gap > 1e-10 * scale) {
    throw std::invalid_argument("cholesky: matrix is not symmetric");
  }

  const Eigen::Index n = a.rows();
  Matrix l = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const double d = a(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0) || !std::isfinite(d)) {
      throw NotPositiveDefinite("cholesky: pivot " + std::to_string(j) +
                                " is not positive");
    }
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (a(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  return CholeskyFactor{std::move(l)};
}

Matrix solve_psd(const CholeskyFactor& l, const Matrix& b) {
  if (l.lower.rows() != b.rows()) {
    throw DimensionMismatch("solve_psd: rhs has " + std::to_string(b.rows()) +
                            " rows, factor has " + std::to_string(l.lower.rows()));
  }
  Matrix x = l.lower.triangularView<Eigen::Lower>().solve(b);
  l.lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

Vector solve_psd(const CholeskyFactor& l, const Vector& b) {
  if (l.lower.rows() != b.size()) {
    throw DimensionMismatch("solve_psd: rhs has " + std::to_string(b.size()) +
                            " rows, factor has " + std::to_string(l.lower.rows()));
  }
  Vector x = l.lower.triangularView<Eigen::Lower>().solve(b);
  l.lower.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
  return x;
}

double logdet(const CholeskyFactor& l) {
  return 2.0 * l.lower.diagonal().array().log().sum();
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

double symmetry_gap(const Matrix& a) {
  double gap = 0.0;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < a.cols(); ++j) {
      gap = std::max(gap, std::abs(a(i, j) - a(j, i)));
    }
  }
  return gap;
}

Matrix gram(const Matrix& m) {
  Matrix g = Matrix::Zero(m.rows(), m.rows());
  g.selfadjointView<Eigen::Lower>().rankUpdate(m);
  g.triangularView<Eigen::StrictlyUpper>() =
      g.transpose().triangularView<Eigen::StrictlyUpper>();
  return g;
}

}  // namespace fedbnr
