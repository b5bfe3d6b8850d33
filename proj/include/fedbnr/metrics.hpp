#pragma once

#include <vector>

#include "fedbnr/blr.hpp"
#include "fedbnr/linalg.hpp"

namespace fedbnr {

double rmse(const Vector& pred_means, const Vector& targets);

/// Nominal central-interval confidence levels vs empirical coverage.
struct CalibrationCurve {
  std::vector<double> levels;
  std::vector<double> coverage;
};

/// Default level grid 0.05, 0.10, ..., 0.95.
std::vector<double> default_levels();

/// Coverage of the central Gaussian interval mean ± z_{(1+p)/2}·std at each
/// level.
CalibrationCurve calibration_curve(const PredictiveDistribution& pred,
                                   const Vector& targets,
                                   const std::vector<double>& levels);

/// mean over levels of |coverage - level|
double ece(const CalibrationCurve& curve);
/// max over levels of |coverage - level|
double mce(const CalibrationCurve& curve);
/// mean over levels and points of (level - inside)²; inside is 0/1, so the
/// curve determines it exactly.
double brier(const CalibrationCurve& curve);

enum class Alternative { AGreater, ALess };

struct TestResult {
  double statistic = 0.0;  // W+: rank sum of positive differences
  double p_value = 1.0;    // one-tailed
  int n_effective = 0;     // pairs with nonzero difference
};

/// One-tailed Wilcoxon signed-rank test on paired samples, midranks for
/// ties. Exact null distribution (equivalent to enumerating all 2^n sign
/// assignments) for n <= 20, normal approximation with tie correction and
/// continuity correction above.
TestResult wilcoxon_one_tailed(const std::vector<double>& a,
                               const std::vector<double>& b,
                               Alternative alternative);

}  // namespace fedbnr
