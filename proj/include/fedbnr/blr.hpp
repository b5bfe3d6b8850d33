#pragma once

#include "fedbnr/autodiff.hpp"
#include "fedbnr/kernels.hpp"
#include "fedbnr/linalg.hpp"

namespace fedbnr {

/// Gaussian posterior over the last linear layer: precision A, its Cholesky
/// factor, mean weights, and the noise / prior scales that produced it.
struct BlrPosterior {
  Matrix a;
  CholeskyFactor a_chol;
  Vector w_bar;
  double sigma = 1.0;
  double lambda = 1.0;

  Eigen::Index dim() const { return a.rows(); }
};

/// Per-point Gaussian predictive; variance includes the σ² noise term.
struct PredictiveDistribution {
  Vector mean;
  Vector variance;
};

/// Exact posterior: A = σ⁻²ΦΦᵀ + λ⁻²I, w̄ = σ⁻²A⁻¹Φy.
BlrPosterior blr_fit(const Matrix& phi, const Vector& y, double sigma,
                     double lambda);

/// mean = w̄ᵀφ*, variance = σ² + φ*ᵀA⁻¹φ* per column of phi_star.
PredictiveDistribution blr_predict(const BlrPosterior& post,
                                   const Matrix& phi_star);

/// Exact log evidence log N(y; 0, λ²ΦᵀΦ + σ²I), evaluated in the primal
/// space through the precision matrix A.
double blr_log_marginal(const Matrix& phi, const Vector& y, double sigma,
                        double lambda);

/// Dual-space GP prediction from prior kernel blocks. k_train is the n x n
/// prior kernel matrix, k_cross its n x q cross block, k_star_diag the q
/// prior variances at the query points. Variance includes σ².
PredictiveDistribution gp_predict_dual(const Matrix& k_train,
                                       const Matrix& k_cross,
                                       const Vector& k_star_diag,
                                       const Vector& y, double sigma);

/// Negative log marginal likelihood of (X, y) as a differentiable loss over
/// the parameter layout of arch.network (weights, log σ, log λ). Minimizing
/// it is the phase-1 local objective.
ad::LossFn make_neg_lml_loss(const UrkConfig& arch, const Matrix& x,
                             const Vector& y);
ad::LossFn make_neg_lml_loss(const UrkConfig& arch, const Matrix& omegas,
                             const Matrix& x, const Vector& y);

/// Knowledge-distillation loss: -LML on the distillation set plus
/// alpha * MSE(kernel(X_kd) - kernel_target).
ad::LossFn make_kd_loss(const UrkConfig& arch, const Matrix& omegas,
                        const Matrix& x_kd, const Vector& y_kd,
                        const Matrix& kernel_target, double alpha);

}  // namespace fedbnr
