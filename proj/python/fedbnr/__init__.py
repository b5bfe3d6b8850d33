"""Federated Bayesian neural regression.

C++ core exposed through the `_core` extension: unifying random kernels,
exact primal-space Bayesian linear regression, calibration metrics, and the
experiment runner.
"""

from ._core import (
    BlrPosterior,
    UrkConfig,
    blr_fit,
    blr_log_marginal,
    blr_predict,
    calibration_curve,
    calibration_metrics,
    closed_form_exp,
    closed_form_gaussian,
    closed_form_poly,
    exp_kernel_construction,
    feature_map,
    gp_predict_dual,
    mc_kernel_estimate,
    poly_kernel_construction,
    rff_gaussian,
    rmse,
    run_experiment,
    run_seed,
    sample_omegas,
    urk_kernel,
    wilcoxon_one_tailed,
)

__all__ = [
    "BlrPosterior",
    "UrkConfig",
    "blr_fit",
    "blr_log_marginal",
    "blr_predict",
    "calibration_curve",
    "calibration_metrics",
    "closed_form_exp",
    "closed_form_gaussian",
    "closed_form_poly",
    "exp_kernel_construction",
    "feature_map",
    "gp_predict_dual",
    "mc_kernel_estimate",
    "poly_kernel_construction",
    "rff_gaussian",
    "rmse",
    "run_experiment",
    "run_seed",
    "sample_omegas",
    "urk_kernel",
    "wilcoxon_one_tailed",
]
