#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedbnr/linalg.hpp"

namespace fedbnr {

/// Per-feature (and target) affine standardization fitted on the training
/// split only.
struct Standardizer {
  Vector x_mean;
  Vector x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
};

struct Dataset {
  Matrix x;  // p x n, one column per sample
  Vector y;  // n
  std::vector<std::string> feature_names;
  std::optional<Standardizer> stats;  // set once standardized

  Eigen::Index n() const { return y.size(); }
  Eigen::Index p() const { return x.rows(); }

  Dataset select(const std::vector<Eigen::Index>& rows) const;
};

/// Disjoint client assignment over the rows of a training set.
struct PartitionPlan {
  std::vector<std::vector<Eigen::Index>> client_rows;
  int sort_feature = -1;
  std::vector<Eigen::Index> chunk_bounds;  // chunk i = [bounds[i], bounds[i+1])
};

struct CsvLoadReport {
  Eigen::Index rows_dropped = 0;
};

/// Numeric CSV with a header row. Rows with missing or non-numeric cells
/// are dropped and counted. The target column may be given by name or by
/// zero-based index ("#3").
Dataset load_csv(const std::string& path, const std::string& target,
                 CsvLoadReport* report = nullptr);

struct Split {
  Dataset train;
  Dataset test;
  Dataset valid;
};

/// Uniform random 8:1:1 split; remainders go to train.
Split split_811(const Dataset& ds, std::uint64_t seed);

/// Sort training rows by the feature with the largest |Pearson correlation|
/// with the target, cut into 2·num_clients contiguous chunks, and hand each
/// client two randomly chosen chunks.
PartitionPlan correlation_sorted_partition(const Dataset& train,
                                           int num_clients,
                                           std::uint64_t seed);

/// Clients own contiguous input ranges of feature 0, split at the given
/// sorted boundaries.
PartitionPlan range_partition(const Dataset& ds,
                              const std::vector<double>& boundaries);

using ScalarFn = std::function<double(double)>;

/// Named 1-d test functions: "sin", "step", "identity", "linear".
ScalarFn synthetic_fn(const std::string& name);

/// n inputs uniform on [lo, hi], targets fn(x) + N(0, noise²).
Dataset synthetic_1d(const ScalarFn& fn, double lo, double hi, Eigen::Index n,
                     double noise_sigma, std::uint64_t seed);

/// 4-feature smooth nonlinear regression surface with one dominant feature;
/// stands in for a small tabular benchmark when no CSV file is around.
Dataset synthetic_tabular(Eigen::Index n, std::uint64_t seed,
                          double noise_sigma = 0.05);

Standardizer fit_standardizer(const Dataset& train);
Dataset apply_standardizer(const Standardizer& s, const Dataset& ds);
/// Back to original units.
double destandardize_mean(const Standardizer& s, double mean);
double destandardize_var(const Standardizer& s, double var);

}  // namespace fedbnr
