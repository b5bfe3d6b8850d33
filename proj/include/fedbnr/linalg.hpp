#pragma once

#include <Eigen/Core>

#include "fedbnr/errors.hpp"

namespace fedbnr {

// Row-major 64-bit storage throughout; calibration metrics are too precision
// sensitive for float32.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
struct CholeskyFactor {
  Matrix lower;

  Eigen::Index dim() const { return lower.rows(); }
};

/// Factor a symmetric positive definite matrix as L·Lᵀ.
/// Throws NotPositiveDefinite if any pivot is ≤ 0.
CholeskyFactor cholesky(const Matrix& a);

/// Solve (L·Lᵀ)x = b by forward then backward substitution.
Matrix solve_psd(const CholeskyFactor& l, const Matrix& b);
Vector solve_psd(const CholeskyFactor& l, const Vector& b);

/// log|L·Lᵀ| = 2·Σ log diag(L)
double logdet(const CholeskyFactor& l);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

/// max |a - aᵀ|
double symmetry_gap(const Matrix& a);

/// Exactly symmetric Gram matrix m·mᵀ (rank update on the lower triangle,
/// mirrored).
Matrix gram(const Matrix& m);

}  // namespace fedbnr
