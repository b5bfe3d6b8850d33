#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "fedbnr/data.hpp"
#include "fedbnr/federated.hpp"
#include "fedbnr/kernels.hpp"

namespace fedbnr {

struct CsvSpec {
  std::string path;
  std::string target;
};

struct SyntheticSpec {
  std::string fn = "sin";
  double lo = -5.0;
  double hi = 5.0;
  Eigen::Index n = 200;
  double noise_sigma = 0.5;
};

struct SyntheticTabularSpec {
  Eigen::Index n = 1000;
  double noise_sigma = 0.05;
};

struct PartitionSpec {
  enum class Kind { Correlation, Range };
  Kind kind = Kind::Correlation;
  int num_clients = 1;
  std::vector<double> boundaries;  // Range only
};

/// Kernel architecture as configured; weights are initialized per seed.
struct KernelSpec {
  // named constructions bypass the network fields
  std::string construction;  // "" | "rff" | "exp" | "poly"
  double rff_lengthscale = 1.0;
  double poly_c = 1.0;
  int poly_n = 2;

  int m = 50;
  std::string normalization = "sqrt-m-minus-1";
  int sampler_dim = 5;
  double sampler_scale = 1.0;
  std::vector<int> extractor_widths = {16};
  int latent_dim = 8;  // 0 = identity extractor
  std::string activation = "tanh";
  bool shifter = true;
  int shifter_hidden = 8;
  std::string combine = "rff-cos-sin";
  std::string nonlinearity = "exp";
  std::string replicate = "none";
  double replicate_scale = 0.1;
  double init_weight_scale = 1.0;
};

struct ExperimentConfig {
  std::variant<CsvSpec, SyntheticSpec, SyntheticTabularSpec> dataset;
  PartitionSpec partition;
  KernelSpec kernel;
  RunConfig run;
  double init_sigma = 1.0;
  double init_lambda = 1.0;
  bool standardize = true;
  std::vector<std::uint64_t> seeds = {1};
  std::string output_dir = "out";
  bool ablation_sweep = false;
};

/// Strict parse: unknown keys are rejected with their field path.
ExperimentConfig parse_config_json(const std::string& text);
ExperimentConfig load_config(const std::string& path);

/// Stable FNV-1a hash of the resolved config (seed list and output paths
/// excluded), hex-encoded.
std::string config_hash(const ExperimentConfig& config);

/// Instantiates the kernel architecture for one seed: weight samples keyed
/// by omega_seed, network weights initialized from init_seed.
UrkConfig build_arch(const KernelSpec& spec, int input_dim,
                     std::uint64_t omega_seed, std::uint64_t init_seed);

struct CurvePoint {
  double x = 0.0;
  double mean = 0.0;
  double lower95 = 0.0;
  double upper95 = 0.0;
};

struct SeedOutcome {
  std::uint64_t seed = 0;
  std::string mode;
  double test_rmse = 0.0;
  double ece = 0.0;
  double mce = 0.0;
  double brier = 0.0;
  int best_round = -1;
  std::vector<RoundRecord> rounds;  // validation RMSE in original units
  std::string record_json;          // byte-stable per (config, seed)
  // predictive curve in original units; filled for 1-d data with a single
  // global model
  std::vector<CurvePoint> curve;
};

/// One full protocol run for one seed; pure given (config, seed).
SeedOutcome run_single_seed(const ExperimentConfig& config,
                            std::uint64_t seed);

/// Executes every seed (and every ablation cell when sweeping), writes one
/// JSON record per (mode, seed) plus a CSV summary with mean ± SEM rows.
void cmd_run(const ExperimentConfig& config, std::ostream& log);

struct Fig2Result {
  double central_rmse = 0.0;     // vs the noiseless truth on a dense grid
  double fed_rmse = 0.0;         // global model, two-client split
  double local_mean_rmse = 0.0;  // local+local ablation, mean over clients
  std::vector<int> sizes;
  std::vector<double> fed_by_size;
  std::vector<double> local_by_size;
};

/// Two-client synthetic experiment: writes the predictive curve with its
/// 95% band and the RMSE-vs-new-client-size curves.
Fig2Result cmd_synthetic_fig2(const std::string& out_dir, std::ostream& log);

struct KernelCheckRow {
  std::string construction;
  std::vector<int> ms;
  std::vector<double> max_abs_err;   // per m, over the input pairs
  double worst_se_ratio = 0.0;       // |err|/stderr at the largest m
  bool errors_decreasing = false;
};

struct KernelCheckResult {
  std::vector<KernelCheckRow> rows;
  double worst_min_eig_ratio = 0.0;  // min over random configs of λmin/trace
  double rff_diag_error = 0.0;       // |k(x,x) - 1| for the RFF construction
};

/// Monte-Carlo recovery and positive-semidefiniteness report for the named
/// constructions.
KernelCheckResult cmd_kernel_check(int m_max, std::ostream& log);

/// Random URK architecture drawn from a family of combine rules, replicate
/// policies and samplers; used by the PSD checks.
UrkConfig random_urk_config(std::uint64_t seed);

}  // namespace fedbnr
