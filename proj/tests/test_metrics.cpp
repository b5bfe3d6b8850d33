#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "fedbnr/errors.hpp"
#include "fedbnr/metrics.hpp"
#include "fedbnr/rng.hpp"

using namespace fedbnr;

namespace {

// literal 2^n enumeration of sign assignments; the independent oracle for
// the exact Wilcoxon tail
double enumerate_wilcoxon_p(const std::vector<double>& ranks, double w_obs,
                            Alternative alt) {
  const std::size_t n = ranks.size();
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (1ULL << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1ULL << i)) w += ranks[i];
    }
    if (alt == Alternative::AGreater ? w >= w_obs - 1e-12
                                     : w <= w_obs + 1e-12) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(1ULL << n);
}

std::vector<double> midranks_of_abs(const std::vector<double>& d) {
  std::vector<std::size_t> order(d.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&d](std::size_t a, std::size_t b) {
    return std::abs(d[a]) < std::abs(d[b]);
  });
  std::vector<double> ranks(d.size());
  std::size_t i = 0;
  while (i < d.size()) {
    std::size_t j = i;
    while (j + 1 < d.size() &&
           std::abs(d[order[j + 1]]) == std::abs(d[order[i]])) {
      ++j;
    }
    for (std::size_t k = i; k <= j; ++k) {
      ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    }
    i = j + 1;
  }
  return ranks;
}

}  // namespace

TEST_CASE("rmse basics") {
  Vector a(2), b(2);
  a << 0, 0;
  b << 3, 4;
  CHECK(rmse(b, b) == 0.0);
  CHECK(rmse(a, b) == doctest::Approx(std::sqrt(12.5)));

  Vector c = b.array() + 2.5;
  CHECK(rmse(c, b) == doctest::Approx(2.5));

  CHECK_THROWS_AS(rmse(Vector(0), Vector(0)), EmptyInput);
  CHECK_THROWS_AS(rmse(a, Vector(Vector::Zero(3))), DimensionMismatch);
}

TEST_CASE("calibration coverage tracks nominal levels on gaussian data") {
  Rng rng(99);
  const Eigen::Index n = 10000;
  PredictiveDistribution pred;
  pred.mean.resize(n);
  pred.variance.resize(n);
  Vector targets(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    pred.mean[i] = rng.uniform(-3.0, 3.0);
    const double sd = 0.5 + rng.uniform();
    pred.variance[i] = sd * sd;
    targets[i] = pred.mean[i] + sd * rng.normal();
  }
  const auto curve = calibration_curve(pred, targets, default_levels());
  for (std::size_t i = 0; i < curve.levels.size(); ++i) {
    CHECK(std::abs(curve.coverage[i] - curve.levels[i]) < 0.02);
  }
  CHECK(ece(curve) < 0.02);
  // coverage is monotone in the level
  for (std::size_t i = 1; i < curve.coverage.size(); ++i) {
    CHECK(curve.coverage[i] >= curve.coverage[i - 1]);
  }
}

TEST_CASE("degenerate calibration cases") {
  PredictiveDistribution exact;
  exact.mean = Vector::Ones(5);
  exact.variance = Vector::Constant(5, 1e-30);
  const auto full = calibration_curve(exact, exact.mean, default_levels());
  for (const double c : full.coverage) CHECK(c == 1.0);

  PredictiveDistribution off;
  off.mean = Vector::Zero(5);
  off.variance = Vector::Constant(5, 1e-30);
  const auto none =
      calibration_curve(off, Vector(Vector::Ones(5)), default_levels());
  for (const double c : none.coverage) CHECK(c == 0.0);

  PredictiveDistribution bad;
  bad.mean = Vector::Zero(2);
  bad.variance = Vector::Zero(2);
  CHECK_THROWS_AS(calibration_curve(bad, Vector(Vector::Zero(2)), {0.5}),
                  std::invalid_argument);
}

TEST_CASE("ece and mce arithmetic") {
  CalibrationCurve perfect;
  perfect.levels = {0.1, 0.5, 0.9};
  perfect.coverage = {0.1, 0.5, 0.9};
  CHECK(ece(perfect) == 0.0);
  CHECK(mce(perfect) == 0.0);

  CalibrationCurve saturated;
  for (int i = 1; i <= 9; ++i) {
    saturated.levels.push_back(0.1 * i);
    saturated.coverage.push_back(1.0);
  }
  CHECK(ece(saturated) == doctest::Approx(0.5));
  CHECK(mce(saturated) == doctest::Approx(0.9));

  CalibrationCurve single;
  single.levels = {0.5};
  single.coverage = {0.3};
  CHECK(ece(single) == doctest::Approx(0.2));
  CHECK(mce(single) == doctest::Approx(0.2));
}

TEST_CASE("ece never exceeds mce") {
  Rng rng(7);
  for (int trial = 0; trial < 30; ++trial) {
    CalibrationCurve curve;
    for (int i = 1; i <= 19; ++i) {
      curve.levels.push_back(0.05 * i);
      curve.coverage.push_back(rng.uniform());
    }
    CHECK(ece(curve) <= mce(curve) + 1e-15);
  }
}

TEST_CASE("brier score arithmetic") {
  CalibrationCurve always_in;
  always_in.levels = {1.0};
  always_in.coverage = {1.0};
  CHECK(brier(always_in) == doctest::Approx(0.0));

  CalibrationCurve coin;
  coin.levels = {0.5};
  coin.coverage = {0.5};
  CHECK(brier(coin) == doctest::Approx(0.25));

  CalibrationCurve never_in;
  never_in.levels = {1.0};
  never_in.coverage = {0.0};
  CHECK(brier(never_in) == doctest::Approx(1.0));
}

TEST_CASE("wilcoxon: five all-positive differences") {
  const std::vector<double> a{1.0, 2.0, 3.0, 4.0, 5.0};
  const std::vector<double> b{0.5, 1.0, 2.0, 3.0, 4.5};
  const auto r = wilcoxon_one_tailed(a, b, Alternative::AGreater);
  CHECK(r.n_effective == 5);
  CHECK(r.statistic == doctest::Approx(15.0));
  CHECK(r.p_value == doctest::Approx(1.0 / 32.0));

  const auto other = wilcoxon_one_tailed(a, b, Alternative::ALess);
  CHECK(other.p_value == doctest::Approx(1.0));
}

TEST_CASE("wilcoxon rejects all-tied samples") {
  const std::vector<double> a{1, 2, 3, 4, 5, 6};
  CHECK_THROWS_AS(wilcoxon_one_tailed(a, a, Alternative::AGreater),
                  TooFewPairs);
  const std::vector<double> few{1, 2, 3, 4};
  const std::vector<double> few_b{0, 1, 2, 3};
  CHECK_THROWS_AS(wilcoxon_one_tailed(few, few_b, Alternative::AGreater),
                  TooFewPairs);
}

TEST_CASE("exact tail matches literal enumeration, with and without ties") {
  Rng rng(2025);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t n = 5 + rng.uniform_index(7);
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      // quantized values force ties in |d|
      a[i] = 0.25 * static_cast<double>(rng.uniform_index(8));
      b[i] = 0.25 * static_cast<double>(rng.uniform_index(8));
      if (a[i] == b[i]) a[i] += 0.25;
    }
    std::vector<double> diffs(n);
    for (std::size_t i = 0; i < n; ++i) diffs[i] = a[i] - b[i];
    const auto ranks = midranks_of_abs(diffs);
    double w_obs = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (diffs[i] > 0.0) w_obs += ranks[i];
    }

    for (const auto alt : {Alternative::AGreater, Alternative::ALess}) {
      const auto r = wilcoxon_one_tailed(a, b, alt);
      const double oracle = enumerate_wilcoxon_p(ranks, w_obs, alt);
      CHECK(r.p_value == doctest::Approx(oracle).epsilon(1e-12));
    }
  }
}

TEST_CASE("exact and normal approximation agree around n = 20") {
  Rng rng(31337);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(20), b(20), a21(21), b21(21);
    for (int i = 0; i < 21; ++i) {
      const double x = rng.uniform(-1.0, 1.0);
      const double y = rng.uniform(-1.0, 1.0) + 0.2;
      if (i < 20) {
        a[static_cast<std::size_t>(i)] = x;
        b[static_cast<std::size_t>(i)] = y;
      }
      a21[static_cast<std::size_t>(i)] = x;
      b21[static_cast<std::size_t>(i)] = y;
    }
    // exact route at n = 20
    const auto exact = wilcoxon_one_tailed(a, b, Alternative::ALess);

    // normal approximation computed directly from the same statistic
    const double n = exact.n_effective;
    const double mean = n * (n + 1.0) / 4.0;
    const double sd = std::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 24.0);
    const double z = (exact.statistic + 0.5 - mean) / sd;
    const double approx = 0.5 * std::erfc(-z / std::numbers::sqrt2);
    CHECK(std::abs(exact.p_value - approx) < 0.01);

    // and the library's own switch to the approximation at n = 21
    const auto big = wilcoxon_one_tailed(a21, b21, Alternative::ALess);
    CHECK(big.p_value > 0.0);
    CHECK(big.p_value <= 1.0);
  }
}

TEST_CASE("exact p is invariant under monotone transforms of |d|") {
  const std::vector<double> a{0.3, 1.4, -0.2, 2.2, 0.9, -1.7};
  const std::vector<double> b{0.1, 0.2, 0.4, 0.3, 0.1, -0.4};
  const auto base = wilcoxon_one_tailed(a, b, Alternative::AGreater);

  // cube the differences: strictly monotone, sign-preserving
  std::vector<double> a3(a.size()), b3(b.size(), 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    a3[i] = d * d * d;
  }
  const auto cubed = wilcoxon_one_tailed(a3, b3, Alternative::AGreater);
  CHECK(base.p_value == doctest::Approx(cubed.p_value).epsilon(1e-12));
  CHECK(base.statistic == doctest::Approx(cubed.statistic));
}
