#include "fedbnr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedbnr/errors.hpp"

namespace fedbnr {

double rmse(const Vector& pred_means, const Vector& targets) {
  if (pred_means.size() == 0) throw EmptyInput("rmse: empty input");
  if (pred_means.size() != targets.size()) {
    throw DimensionMismatch("rmse: length mismatch");
  }
  return std::sqrt((pred_means - targets).squaredNorm() /
                   static_cast<double>(targets.size()));
}

std::vector<double> default_levels() {
  std::vector<double> levels;
  for (int i = 1; i <= 19; ++i) levels.push_back(0.05 * i);
  return levels;
}

CalibrationCurve calibration_curve(const PredictiveDistribution& pred,
                                   const Vector& targets,
                                   const std::vector<double>& levels) {
  const Eigen::Index n = targets.size();
  if (pred.mean.size() != n || pred.variance.size() != n) {
    throw DimensionMismatch("calibration_curve: size mismatch");
  }
  if (n == 0) throw EmptyInput("calibration_curve: no points");
  if (pred.variance.minCoeff() <= 0.0) {
    throw std::invalid_argument("calibration_curve: variances must be > 0");
  }

  // |y - mean| <= z_{(1+p)/2}·std  <=>  erf(|y - mean| / (std·sqrt 2)) <= p
  Vector conf(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = std::abs(targets[i] - pred.mean[i]);
    conf[i] = d == 0.0 ? 0.0
                       : std::erf(d / (std::sqrt(pred.variance[i]) *
                                       std::numbers::sqrt2));
  }

  CalibrationCurve curve;
  curve.levels = levels;
  curve.coverage.reserve(levels.size());
  for (const double p : levels) {
    Eigen::Index inside = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (conf[i] <= p) ++inside;
    }
    curve.coverage.push_back(static_cast<double>(inside) /
                             static_cast<double>(n));
  }
  return curve;
}

double ece(const CalibrationCurve& curve) {
  if (curve.levels.empty()) throw EmptyInput("ece: empty curve");
  double acc = 0.0;
  for (std::size_t i = 0; i < curve.levels.size(); ++i) {
    acc += std::abs(curve.coverage[i] - curve.levels[i]);
  }
  return acc / static_cast<double>(curve.levels.size());
}

double mce(const CalibrationCurve& curve) {
  if (curve.levels.empty()) throw EmptyInput("mce: empty curve");
  double worst = 0.0;
  for (std::size_t i = 0; i < curve.levels.size(); ++i) {
    worst = std::max(worst, std::abs(curve.coverage[i] - curve.levels[i]));
  }
  return worst;
}

double brier(const CalibrationCurve& curve) {
  if (curve.levels.empty()) throw EmptyInput("brier: empty curve");
  // mean over points of (p - inside)² expands to p² - 2p·coverage + coverage
  // since inside is an indicator
  double acc = 0.0;
  for (std::size_t i = 0; i < curve.levels.size(); ++i) {
    const double p = curve.levels[i];
    const double c = curve.coverage[i];
    acc += p * p - 2.0 * p * c + c;
  }
  return acc / static_cast<double>(curve.levels.size());
}

namespace {

struct RankedDiffs {
  std::vector<double> ranks;  // midranks of |d|, aligned with diffs
  std::vector<double> diffs;  // nonzero differences
  double tie_correction = 0.0;  // Σ (t³ - t) over tie groups
};

RankedDiffs rank_differences(const std::vector<double>& a,
                             const std::vector<double>& b) {
  if (a.size() != b.size()) {
    throw DimensionMismatch("wilcoxon: paired samples differ in length");
  }
  RankedDiffs rd;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0.0) rd.diffs.push_back(d);
  }
  const std::size_t n = rd.diffs.size();
  if (n < 5) {
    throw TooFewPairs("wilcoxon needs at least 5 nonzero differences");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&rd](std::size_t i, std::size_t j) {
    return std::abs(rd.diffs[i]) < std::abs(rd.diffs[j]);
  });

  rd.ranks.resize(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(rd.diffs[order[j + 1]]) ==
                            std::abs(rd.diffs[order[i]])) {
      ++j;
    }
    const double midrank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      rd.ranks[order[k]] = midrank;
    }
    const auto t = static_cast<double>(j - i + 1);
    rd.tie_correction += t * t * t - t;
    i = j + 1;
  }
  return rd;
}

// Null distribution of 2·W+ by subset-sum counting over the doubled ranks;
// identical to enumerating all 2^n sign assignments.
std::vector<double> doubled_rank_counts(const std::vector<double>& ranks) {
  int total = 0;
  std::vector<int> doubled;
  for (const double r : ranks) {
    const int d = static_cast<int>(std::llround(2.0 * r));
    doubled.push_back(d);
    total += d;
  }
  std::vector<double> count(static_cast<std::size_t>(total) + 1, 0.0);
  count[0] = 1.0;
  int reach = 0;
  for (const int d : doubled) {
    reach += d;
    for (int s = reach; s >= d; --s) {
      count[static_cast<std::size_t>(s)] +=
          count[static_cast<std::size_t>(s - d)];
    }
  }
  return count;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

TestResult wilcoxon_one_tailed(const std::vector<double>& a,
                               const std::vector<double>& b,
                               Alternative alternative) {
  const RankedDiffs rd = rank_differences(a, b);
  const auto n = static_cast<int>(rd.diffs.size());

  double w_plus = 0.0;
  for (std::size_t i = 0; i < rd.diffs.size(); ++i) {
    if (rd.diffs[i] > 0.0) w_plus += rd.ranks[i];
  }

  TestResult result;
  result.statistic = w_plus;
  result.n_effective = n;

  if (n <= 20) {
    const auto counts = doubled_rank_counts(rd.ranks);
    const int w2 = static_cast<int>(std::llround(2.0 * w_plus));
    const double total = std::pow(2.0, n);
    double tail = 0.0;
    if (alternative == Alternative::AGreater) {
      for (std::size_t s = static_cast<std::size_t>(w2); s < counts.size();
           ++s) {
        tail += counts[s];
      }
    } else {
      for (int s = 0; s <= w2; ++s) {
        tail += counts[static_cast<std::size_t>(s)];
      }
    }
    result.p_value = std::min(1.0, tail / total);
    return result;
  }

  const double dn = n;
  const double mean = dn * (dn + 1.0) / 4.0;
  const double var =
      dn * (dn + 1.0) * (2.0 * dn + 1.0) / 24.0 - rd.tie_correction / 48.0;
  const double sd = std::sqrt(var);
  double p;
  if (alternative == Alternative::AGreater) {
    p = 1.0 - normal_cdf((w_plus - 0.5 - mean) / sd);
  } else {
    p = normal_cdf((w_plus + 0.5 - mean) / sd);
  }
  result.p_value = std::clamp(p, 1e-300, 1.0);
  return result;
}

}  // namespace fedbnr
