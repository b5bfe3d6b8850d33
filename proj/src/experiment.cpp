#include "fedbnr/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <ostream>

#include <Eigen/Eigenvalues>
#include <json.hpp>

#include "fedbnr/errors.hpp"
#include "fedbnr/metrics.hpp"

namespace fedbnr {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------- parsing

void check_keys(const json& j, const std::string& path,
                std::initializer_list<const char*> allowed) {
  if (!j.is_object()) {
    throw ConfigError(path + ": expected an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        ok = true;
        break;
      }
    }
    if (!ok) {
      throw ConfigError(path + "." + it.key() + ": unknown key");
    }
  }
}

template <typename T>
T get_field(const json& j, const std::string& path, const char* key, T def) {
  if (!j.contains(key)) return def;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(path + "." + key + ": invalid value");
  }
}

std::string get_required_string(const json& j, const std::string& path,
                                const char* key) {
  if (!j.contains(key)) {
    throw ConfigError(path + "." + key + ": missing required field");
  }
  if (!j.at(key).is_string()) {
    throw ConfigError(path + "." + key + ": expected a string");
  }
  return j.at(key).get<std::string>();
}

void parse_dataset(const json& j, ExperimentConfig& cfg) {
  const std::string type = get_required_string(j, "dataset", "type");
  if (type == "csv") {
    check_keys(j, "dataset", {"type", "path", "target"});
    CsvSpec spec;
    spec.path = get_required_string(j, "dataset", "path");
    spec.target = get_required_string(j, "dataset", "target");
    cfg.dataset = spec;
  } else if (type == "synthetic") {
    check_keys(j, "dataset", {"type", "fn", "range", "n", "noise_sigma"});
    SyntheticSpec spec;
    spec.fn = get_field<std::string>(j, "dataset", "fn", spec.fn);
    if (j.contains("range")) {
      const auto r = j.at("range");
      if (!r.is_array() || r.size() != 2) {
        throw ConfigError("dataset.range: expected [lo, hi]");
      }
      spec.lo = r[0].get<double>();
      spec.hi = r[1].get<double>();
    }
    spec.n = get_field<Eigen::Index>(j, "dataset", "n", spec.n);
    spec.noise_sigma =
        get_field<double>(j, "dataset", "noise_sigma", spec.noise_sigma);
    cfg.dataset = spec;
  } else if (type == "synthetic-tabular") {
    check_keys(j, "dataset", {"type", "n", "noise_sigma"});
    SyntheticTabularSpec spec;
    spec.n = get_field<Eigen::Index>(j, "dataset", "n", spec.n);
    spec.noise_sigma =
        get_field<double>(j, "dataset", "noise_sigma", spec.noise_sigma);
    cfg.dataset = spec;
  } else {
    throw ConfigError("dataset.type: unknown dataset type '" + type + "'");
  }
}

void parse_partition(const json& j, ExperimentConfig& cfg) {
  const std::string type =
      get_field<std::string>(j, "partition", "type", "correlation");
  if (type == "correlation") {
    check_keys(j, "partition", {"type", "num_clients"});
    cfg.partition.kind = PartitionSpec::Kind::Correlation;
    cfg.partition.num_clients =
        get_field<int>(j, "partition", "num_clients", 1);
  } else if (type == "range") {
    check_keys(j, "partition", {"type", "boundaries"});
    cfg.partition.kind = PartitionSpec::Kind::Range;
    cfg.partition.boundaries = get_field<std::vector<double>>(
        j, "partition", "boundaries", {});
    cfg.partition.num_clients =
        static_cast<int>(cfg.partition.boundaries.size()) + 1;
  } else {
    throw ConfigError("partition.type: unknown partition type '" + type +
                      "'");
  }
}

void parse_kernel(const json& j, KernelSpec& ks) {
  check_keys(j, "kernel",
             {"construction", "lengthscale", "poly_c", "poly_n", "m",
              "normalization", "sampler_dim", "sampler_scale",
              "extractor_widths", "latent_dim", "activation", "shifter",
              "shifter_hidden", "combine", "nonlinearity", "replicate",
              "replicate_scale", "init_weight_scale"});
  ks.construction =
      get_field<std::string>(j, "kernel", "construction", ks.construction);
  ks.rff_lengthscale =
      get_field<double>(j, "kernel", "lengthscale", ks.rff_lengthscale);
  ks.poly_c = get_field<double>(j, "kernel", "poly_c", ks.poly_c);
  ks.poly_n = get_field<int>(j, "kernel", "poly_n", ks.poly_n);
  ks.m = get_field<int>(j, "kernel", "m", ks.m);
  ks.normalization =
      get_field<std::string>(j, "kernel", "normalization", ks.normalization);
  ks.sampler_dim = get_field<int>(j, "kernel", "sampler_dim", ks.sampler_dim);
  ks.sampler_scale =
      get_field<double>(j, "kernel", "sampler_scale", ks.sampler_scale);
  ks.extractor_widths = get_field<std::vector<int>>(
      j, "kernel", "extractor_widths", ks.extractor_widths);
  ks.latent_dim = get_field<int>(j, "kernel", "latent_dim", ks.latent_dim);
  ks.activation =
      get_field<std::string>(j, "kernel", "activation", ks.activation);
  ks.shifter = get_field<bool>(j, "kernel", "shifter", ks.shifter);
  ks.shifter_hidden =
      get_field<int>(j, "kernel", "shifter_hidden", ks.shifter_hidden);
  ks.combine = get_field<std::string>(j, "kernel", "combine", ks.combine);
  ks.nonlinearity =
      get_field<std::string>(j, "kernel", "nonlinearity", ks.nonlinearity);
  ks.replicate =
      get_field<std::string>(j, "kernel", "replicate", ks.replicate);
  ks.replicate_scale =
      get_field<double>(j, "kernel", "replicate_scale", ks.replicate_scale);
  ks.init_weight_scale = get_field<double>(j, "kernel", "init_weight_scale",
                                           ks.init_weight_scale);
}

void parse_run(const json& j, RunConfig& rc) {
  check_keys(j, "run",
             {"mode", "local_epochs", "max_rounds", "lr_local", "lr_kd",
              "kd_alpha", "kd_epochs", "kd_halving", "patience",
              "weighted_fedavg", "threads"});
  const std::string mode =
      get_field<std::string>(j, "run", "mode", "avg+global");
  const AblationMode am = ablation_select(mode);
  rc.phase1 = am.phase1;
  rc.phase2 = am.phase2;
  rc.local_epochs = get_field<int>(j, "run", "local_epochs", rc.local_epochs);
  rc.max_rounds = get_field<int>(j, "run", "max_rounds", rc.max_rounds);
  rc.lr_local = get_field<double>(j, "run", "lr_local", rc.lr_local);
  rc.lr_kd = get_field<double>(j, "run", "lr_kd", rc.lr_kd);
  rc.kd_alpha = get_field<double>(j, "run", "kd_alpha", rc.kd_alpha);
  rc.kd_epochs = get_field<int>(j, "run", "kd_epochs", rc.kd_epochs);
  rc.kd_halving = get_field<bool>(j, "run", "kd_halving", rc.kd_halving);
  rc.patience = get_field<int>(j, "run", "patience", rc.patience);
  rc.weighted_fedavg =
      get_field<bool>(j, "run", "weighted_fedavg", rc.weighted_fedavg);
  rc.threads = get_field<int>(j, "run", "threads", rc.threads);
  if (rc.patience < 1) throw ConfigError("run.patience: must be >= 1");
  if (rc.kd_alpha < 0.0) throw ConfigError("run.kd_alpha: must be >= 0");
}

json dataset_to_json(const ExperimentConfig& cfg) {
  json d;
  if (const auto* csv = std::get_if<CsvSpec>(&cfg.dataset)) {
    d["type"] = "csv";
    d["path"] = csv->path;
    d["target"] = csv->target;
  } else if (const auto* syn = std::get_if<SyntheticSpec>(&cfg.dataset)) {
    d["type"] = "synthetic";
    d["fn"] = syn->fn;
    d["range"] = {syn->lo, syn->hi};
    d["n"] = syn->n;
    d["noise_sigma"] = syn->noise_sigma;
  } else {
    const auto& tab = std::get<SyntheticTabularSpec>(cfg.dataset);
    d["type"] = "synthetic-tabular";
    d["n"] = tab.n;
    d["noise_sigma"] = tab.noise_sigma;
  }
  return d;
}

json resolved_to_json(const ExperimentConfig& cfg) {
  json j;
  j["dataset"] = dataset_to_json(cfg);
  j["partition"] = {
      {"type", cfg.partition.kind == PartitionSpec::Kind::Correlation
                   ? "correlation"
                   : "range"},
      {"num_clients", cfg.partition.num_clients},
      {"boundaries", cfg.partition.boundaries}};
  const KernelSpec& ks = cfg.kernel;
  j["kernel"] = {{"construction", ks.construction},
                 {"lengthscale", ks.rff_lengthscale},
                 {"poly_c", ks.poly_c},
                 {"poly_n", ks.poly_n},
                 {"m", ks.m},
                 {"normalization", ks.normalization},
                 {"sampler_dim", ks.sampler_dim},
                 {"sampler_scale", ks.sampler_scale},
                 {"extractor_widths", ks.extractor_widths},
                 {"latent_dim", ks.latent_dim},
                 {"activation", ks.activation},
                 {"shifter", ks.shifter},
                 {"shifter_hidden", ks.shifter_hidden},
                 {"combine", ks.combine},
                 {"nonlinearity", ks.nonlinearity},
                 {"replicate", ks.replicate},
                 {"replicate_scale", ks.replicate_scale},
                 {"init_weight_scale", ks.init_weight_scale}};
  const RunConfig& rc = cfg.run;
  j["run"] = {{"mode", ablation_name({rc.phase1, rc.phase2})},
              {"local_epochs", rc.local_epochs},
              {"max_rounds", rc.max_rounds},
              {"lr_local", rc.lr_local},
              {"lr_kd", rc.lr_kd},
              {"kd_alpha", rc.kd_alpha},
              {"kd_epochs", rc.kd_epochs},
              {"kd_halving", rc.kd_halving},
              {"patience", rc.patience},
              {"weighted_fedavg", rc.weighted_fedavg}};
  j["init"] = {{"sigma", cfg.init_sigma}, {"lambda", cfg.init_lambda}};
  j["standardize"] = cfg.standardize;
  return j;
}

// ------------------------------------------------------------ arch builder

Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw ConfigError("kernel.activation: unknown activation '" + s + "'");
}

Normalization parse_normalization(const std::string& s) {
  if (s == "sqrt-m") return Normalization::SqrtM;
  if (s == "sqrt-m-minus-1") return Normalization::SqrtMMinus1;
  throw ConfigError("kernel.normalization: unknown normalization '" + s +
                    "'");
}

CombineRule parse_combine(const std::string& s) {
  if (s == "rff-cos-sin") return CombineRule::RffCosSin;
  if (s == "inner-product-then-nonlinearity") return CombineRule::InnerProduct;
  if (s == "elementwise-power") return CombineRule::ElementwisePower;
  throw ConfigError("kernel.combine: unknown combine rule '" + s + "'");
}

Nonlinearity parse_nonlinearity(const std::string& s) {
  if (s == "exp") return Nonlinearity::Exp;
  if (s == "tanh") return Nonlinearity::Tanh;
  if (s == "relu") return Nonlinearity::Relu;
  if (s == "cos") return Nonlinearity::Cos;
  if (s == "sin") return Nonlinearity::Sin;
  if (s == "identity") return Nonlinearity::Identity;
  throw ConfigError("kernel.nonlinearity: unknown nonlinearity '" + s + "'");
}

ReplicatePolicy parse_replicate(const std::string& s) {
  if (s == "none") return ReplicatePolicy::None;
  if (s == "multiply-noise") return ReplicatePolicy::MultiplyNoise;
  if (s == "add-noise") return ReplicatePolicy::AddNoise;
  throw ConfigError("kernel.replicate: unknown replicate policy '" + s + "'");
}

// ----------------------------------------------------------- run plumbing

struct EvalMetrics {
  double rmse_v = 0.0;
  double ece_v = 0.0;
  double mce_v = 0.0;
  double brier_v = 0.0;
};

EvalMetrics evaluate_models(const std::vector<Predictor>& models,
                            const Matrix& x_test,
                            const Vector& y_test_original,
                            const std::optional<Standardizer>& stats) {
  EvalMetrics acc;
  const auto levels = default_levels();
  for (const auto& model : models) {
    PredictiveDistribution pred = predict(model, x_test);
    if (stats) {
      for (Eigen::Index i = 0; i < pred.mean.size(); ++i) {
        pred.mean[i] = destandardize_mean(*stats, pred.mean[i]);
        pred.variance[i] = destandardize_var(*stats, pred.variance[i]);
      }
    }
    acc.rmse_v += rmse(pred.mean, y_test_original);
    const auto curve = calibration_curve(pred, y_test_original, levels);
    acc.ece_v += ece(curve);
    acc.mce_v += mce(curve);
    acc.brier_v += brier(curve);
  }
  const auto k = static_cast<double>(models.size());
  acc.rmse_v /= k;
  acc.ece_v /= k;
  acc.mce_v /= k;
  acc.brier_v /= k;
  return acc;
}

Dataset materialize_dataset(const ExperimentConfig& cfg,
                            std::uint64_t data_seed) {
  if (const auto* csv = std::get_if<CsvSpec>(&cfg.dataset)) {
    return load_csv(csv->path, csv->target);
  }
  if (const auto* syn = std::get_if<SyntheticSpec>(&cfg.dataset)) {
    return synthetic_1d(synthetic_fn(syn->fn), syn->lo, syn->hi, syn->n,
                        syn->noise_sigma, data_seed);
  }
  const auto& tab = std::get<SyntheticTabularSpec>(cfg.dataset);
  return synthetic_tabular(tab.n, data_seed, tab.noise_sigma);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// deterministic, adaptive full-batch ascent used for centralized kernel
// fitting in the synthetic experiment
ParamVector train_lml_adaptive(const UrkConfig& arch, const Matrix& omegas,
                               ParamVector params, const Matrix& x,
                               const Vector& y, int epochs, double lr) {
  const auto loss = make_neg_lml_loss(arch, omegas, x, y);
  auto eval = [&loss](const ParamVector& p) {
    try {
      return ad::evaluate_with_gradient(loss, p);
    } catch (const NotPositiveDefinite&) {
      ad::GradResult r;
      r.value = std::numeric_limits<double>::quiet_NaN();
      r.grads = ParamVector::zeros(p.layout);
      return r;
    }
  };
  auto cur = eval(params);
  if (!std::isfinite(cur.value)) return params;
  int halvings = 0;
  for (int e = 0; e < epochs;) {
    ParamVector cand = params;
    cand.data -= lr * cur.grads.data;
    const auto next = eval(cand);
    if (!std::isfinite(next.value) || next.value > cur.value) {
      lr *= 0.5;
      if (++halvings > 60) break;
      continue;
    }
    params = std::move(cand);
    cur = next;
    ++e;
  }
  return params;
}

int env_threads() {
  const char* env = std::getenv("FEDBNR_THREADS");
  if (!env) return 0;
  const int v = std::atoi(env);
  return v > 0 ? v : 0;
}

}  // namespace

ExperimentConfig parse_config_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  check_keys(j, "config",
             {"dataset", "partition", "kernel", "run", "init", "seeds",
              "output_dir", "standardize", "ablation_sweep"});
  ExperimentConfig cfg;
  if (!j.contains("dataset")) {
    throw ConfigError("config.dataset: missing required section");
  }
  parse_dataset(j.at("dataset"), cfg);
  if (j.contains("partition")) parse_partition(j.at("partition"), cfg);
  if (j.contains("kernel")) parse_kernel(j.at("kernel"), cfg.kernel);
  if (j.contains("run")) parse_run(j.at("run"), cfg.run);
  if (j.contains("init")) {
    check_keys(j.at("init"), "init", {"sigma", "lambda"});
    cfg.init_sigma = get_field<double>(j.at("init"), "init", "sigma", 1.0);
    cfg.init_lambda = get_field<double>(j.at("init"), "init", "lambda", 1.0);
    if (!(cfg.init_sigma > 0.0) || !(cfg.init_lambda > 0.0)) {
      throw ConfigError("init: sigma and lambda must be > 0");
    }
  }
  cfg.standardize = get_field<bool>(j, "config", "standardize", true);
  cfg.ablation_sweep = get_field<bool>(j, "config", "ablation_sweep", false);
  cfg.seeds =
      get_field<std::vector<std::uint64_t>>(j, "config", "seeds", {1});
  if (cfg.seeds.empty()) throw ConfigError("config.seeds: must be nonempty");
  cfg.output_dir =
      get_field<std::string>(j, "config", "output_dir", "out");
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_config_json(text);
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string dump = resolved_to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (const unsigned char c : dump) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

UrkConfig build_arch(const KernelSpec& spec, int input_dim,
                     std::uint64_t omega_seed, std::uint64_t init_seed) {
  if (spec.construction == "rff") {
    UrkConfig cfg =
        rff_gaussian(spec.rff_lengthscale, input_dim, omega_seed, spec.m);
    cfg.normalization = parse_normalization(
        spec.normalization == "sqrt-m-minus-1" ? "sqrt-m" : spec.normalization);
    return cfg;
  }
  if (spec.construction == "exp") {
    return exp_kernel_construction(input_dim, omega_seed, spec.m);
  }
  if (spec.construction == "poly") {
    return poly_kernel_construction(spec.poly_c, spec.poly_n, input_dim,
                                    omega_seed, spec.m);
  }
  if (!spec.construction.empty()) {
    throw ConfigError("kernel.construction: unknown construction '" +
                      spec.construction + "'");
  }

  const Activation act = parse_activation(spec.activation);
  UrkConfig cfg;
  cfg.m = spec.m;
  cfg.normalization = parse_normalization(spec.normalization);
  cfg.sampler.kind = OmegaSampler::Kind::StandardNormal;
  cfg.sampler.dim = spec.sampler_dim;
  cfg.sampler.scale = spec.sampler_scale;
  cfg.sampler.seed = omega_seed;

  KernelNetwork& net = cfg.network;
  net.input_dim = input_dim;
  net.combine = parse_combine(spec.combine);
  net.combine_nl = parse_nonlinearity(spec.nonlinearity);
  net.replicate = parse_replicate(spec.replicate);
  net.replicate_scale = spec.replicate_scale;

  int latent = input_dim;
  if (spec.latent_dim > 0) {
    int in = input_dim;
    for (const int w : spec.extractor_widths) {
      net.extractor.push_back(
          {Matrix::Zero(w, in), Vector::Zero(w), act});
      in = w;
    }
    net.extractor.push_back(
        {Matrix::Zero(spec.latent_dim, in), Vector::Zero(spec.latent_dim),
         Activation::Identity});
    latent = spec.latent_dim;
  }
  if (spec.shifter) {
    net.shifter.push_back({Matrix::Zero(spec.shifter_hidden, spec.sampler_dim),
                           Vector::Zero(spec.shifter_hidden), act});
    net.shifter.push_back({Matrix::Zero(latent, spec.shifter_hidden),
                           Vector::Zero(latent), Activation::Identity});
    net.shifter_skip = true;
  }
  init_weights(net, init_seed, spec.init_weight_scale);
  cfg.validate();
  return cfg;
}

SeedOutcome run_single_seed(const ExperimentConfig& config,
                            std::uint64_t seed) {
  const std::uint64_t omega_seed = mix64(seed, 1);
  const std::uint64_t init_seed = mix64(seed, 2);
  const std::uint64_t split_seed = mix64(seed, 3);
  const std::uint64_t partition_seed = mix64(seed, 4);
  const std::uint64_t data_seed = mix64(seed, 5);

  const Dataset full = materialize_dataset(config, data_seed);
  Split split = split_811(full, split_seed);
  const Vector y_test_original = split.test.y;

  std::optional<Standardizer> stats;
  if (config.standardize) {
    stats = fit_standardizer(split.train);
    split.train = apply_standardizer(*stats, split.train);
    split.test = apply_standardizer(*stats, split.test);
    split.valid = apply_standardizer(*stats, split.valid);
  }

  PartitionPlan plan;
  if (config.partition.kind == PartitionSpec::Kind::Correlation) {
    plan = correlation_sorted_partition(split.train,
                                        config.partition.num_clients,
                                        partition_seed);
  } else {
    plan = range_partition(split.train, config.partition.boundaries);
  }

  const UrkConfig arch = build_arch(
      config.kernel, static_cast<int>(full.p()), omega_seed, init_seed);
  const ParamVector init =
      pack_params(arch.network, config.init_sigma, config.init_lambda);

  std::vector<ClientState> clients;
  for (std::size_t c = 0; c < plan.client_rows.size(); ++c) {
    const Dataset part = split.train.select(plan.client_rows[c]);
    clients.push_back(
        ClientState{static_cast<int>(c), part.x, part.y, init, {}});
  }

  ServerState server;
  server.params = init;
  server.omegas = sample_omegas(arch);
  server.aggregation = config.run.phase1;

  RunConfig rc = config.run;
  rc.num_clients = static_cast<int>(clients.size());
  rc.seed = seed;
  if (rc.threads == 0) rc.threads = env_threads();

  Matrix x_val = split.valid.x;
  Vector y_val = split.valid.y;
  if (rc.phase1 == Phase1Mode::Kd) {
    // 80% of the validation split feeds distillation, the rest keeps early
    // stopping honest
    const Eigen::Index n_kd =
        static_cast<Eigen::Index>(0.8 * static_cast<double>(split.valid.n()));
    if (n_kd < 1 || split.valid.n() - n_kd < 1) {
      throw ConfigError("validation split too small to carve a kd dataset");
    }
    std::vector<Eigen::Index> kd_rows, val_rows;
    for (Eigen::Index i = 0; i < split.valid.n(); ++i) {
      (i < n_kd ? kd_rows : val_rows).push_back(i);
    }
    const Dataset kd = split.valid.select(kd_rows);
    const Dataset val = split.valid.select(val_rows);
    server.kd_data = {kd.x, kd.y};
    x_val = val.x;
    y_val = val.y;
  }

  const auto result = run_fedbnr(rc, arch, clients, server, x_val, y_val);
  const EvalMetrics em =
      evaluate_models(result.models, split.test.x, y_test_original, stats);

  SeedOutcome out;
  if (full.p() == 1 && result.models.size() == 1) {
    const double lo = full.x.row(0).minCoeff();
    const double hi = full.x.row(0).maxCoeff();
    const Eigen::Index grid_n = 201;
    Matrix grid(1, grid_n);
    for (Eigen::Index i = 0; i < grid_n; ++i) {
      grid(0, i) = lo + (hi - lo) * static_cast<double>(i) /
                            static_cast<double>(grid_n - 1);
    }
    Matrix grid_model = grid;
    if (stats) {
      grid_model = (grid.array() - stats->x_mean[0]) / stats->x_std[0];
    }
    const auto pred = predict(result.models.front(), grid_model);
    for (Eigen::Index i = 0; i < grid_n; ++i) {
      double mean = pred.mean[i];
      double var = pred.variance[i];
      if (stats) {
        mean = destandardize_mean(*stats, mean);
        var = destandardize_var(*stats, var);
      }
      const double half = 1.959963984540054 * std::sqrt(var);
      out.curve.push_back(CurvePoint{grid(0, i), mean, mean - half,
                                     mean + half});
    }
  }
  out.seed = seed;
  out.mode = ablation_name({rc.phase1, rc.phase2});
  out.test_rmse = em.rmse_v;
  out.ece = em.ece_v;
  out.mce = em.mce_v;
  out.brier = em.brier_v;
  out.best_round = result.best_round;
  out.rounds = result.rounds;
  const double y_scale = stats ? stats->y_std : 1.0;
  for (auto& r : out.rounds) r.val_rmse *= y_scale;

  json rounds = json::array();
  for (const auto& r : out.rounds) {
    rounds.push_back({{"round", r.round}, {"val_rmse", r.val_rmse}});
  }
  const json record = {
      {"config_hash", config_hash(config)},
      {"mode", out.mode},
      {"seed", seed},
      {"best_round", out.best_round},
      {"rounds", rounds},
      {"final",
       {{"test_rmse", out.test_rmse},
        {"ece", out.ece},
        {"mce", out.mce},
        {"brier", out.brier}}}};
  out.record_json = record.dump(2) + "\n";
  return out;
}

void cmd_run(const ExperimentConfig& config, std::ostream& log) {
  fs::create_directories(config.output_dir);

  std::vector<AblationMode> modes;
  if (config.ablation_sweep) {
    for (const auto p1 :
         {Phase1Mode::Local, Phase1Mode::Avg, Phase1Mode::Kd}) {
      for (const auto p2 : {Phase2Mode::Local, Phase2Mode::Global}) {
        modes.push_back({p1, p2});
      }
    }
  } else {
    modes.push_back({config.run.phase1, config.run.phase2});
  }

  std::ofstream summary(fs::path(config.output_dir) / "summary.csv");
  summary << "mode,num_seeds,rmse_mean,rmse_sem,ece_mean,ece_sem,mce_mean,"
             "mce_sem,brier_mean,brier_sem,wall_time_s\n";

  for (const auto mode : modes) {
    ExperimentConfig cfg = config;
    cfg.run.phase1 = mode.phase1;
    cfg.run.phase2 = mode.phase2;
    const std::string mode_name = ablation_name(mode);

    const auto t0 = std::chrono::steady_clock::now();
    std::vector<SeedOutcome> outcomes;
    for (const std::uint64_t seed : cfg.seeds) {
      SeedOutcome oc = run_single_seed(cfg, seed);
      const fs::path file =
          fs::path(cfg.output_dir) /
          ("record_" + mode_name + "_seed" + std::to_string(seed) + ".json");
      std::ofstream rec(file, std::ios::binary);
      rec << oc.record_json;
      if (!oc.curve.empty()) {
        std::ofstream curve(fs::path(cfg.output_dir) /
                            ("curve_" + mode_name + "_seed" +
                             std::to_string(seed) + ".csv"));
        curve << "x,mean,lower95,upper95\n";
        for (const auto& p : oc.curve) {
          curve << format_double(p.x) << ',' << format_double(p.mean) << ','
                << format_double(p.lower95) << ','
                << format_double(p.upper95) << '\n';
        }
      }
      outcomes.push_back(std::move(oc));
    }
    const auto t1 = std::chrono::steady_clock::now();
    const double wall =
        std::chrono::duration<double>(t1 - t0).count();

    auto mean_sem = [&outcomes](auto getter) {
      const auto n = static_cast<double>(outcomes.size());
      double mean = 0.0;
      for (const auto& oc : outcomes) mean += getter(oc);
      mean /= n;
      double sem = 0.0;
      if (outcomes.size() > 1) {
        double ss = 0.0;
        for (const auto& oc : outcomes) {
          const double d = getter(oc) - mean;
          ss += d * d;
        }
        sem = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
      }
      return std::pair<double, double>{mean, sem};
    };

    const auto [rm, rs] = mean_sem([](const SeedOutcome& o) { return o.test_rmse; });
    const auto [em, es] = mean_sem([](const SeedOutcome& o) { return o.ece; });
    const auto [mm, ms] = mean_sem([](const SeedOutcome& o) { return o.mce; });
    const auto [bm, bs] = mean_sem([](const SeedOutcome& o) { return o.brier; });

    summary << mode_name << ',' << outcomes.size() << ','
            << format_double(rm) << ',' << format_double(rs) << ','
            << format_double(em) << ',' << format_double(es) << ','
            << format_double(mm) << ',' << format_double(ms) << ','
            << format_double(bm) << ',' << format_double(bs) << ','
            << format_double(wall) << '\n';
    log << mode_name << ": rmse " << format_double(rm) << " +- "
        << format_double(rs) << ", ece " << format_double(em) << ", "
        << outcomes.size() << " seed(s), " << format_double(wall) << " s\n";
  }
}

Fig2Result cmd_synthetic_fig2(const std::string& out_dir, std::ostream& log) {
  fs::create_directories(out_dir);
  const std::uint64_t seed = 20240517;

  const auto truth = synthetic_fn("sin");
  const Dataset ds = synthetic_1d(truth, -5.0, 5.0, 200, 0.5, seed);

  // latent stationary kernel: identity extractor, learnable shifter
  KernelSpec ks;
  ks.extractor_widths = {};
  ks.latent_dim = 0;
  ks.sampler_dim = 5;
  ks.shifter_hidden = 8;
  ks.m = 50;
  const UrkConfig arch = build_arch(ks, 1, mix64(seed, 1), mix64(seed, 2));
  const Matrix omegas = sample_omegas(arch);

  // centralized kernel fit shared by every model below
  ParamVector params = pack_params(arch.network, 1.0, 1.0);
  params = train_lml_adaptive(arch, omegas, params, ds.x, ds.y, 400, 0.05);
  const double sigma = sigma_of(params);
  const double lambda = lambda_of(params);

  const UrkConfig kernel = bind_config(arch, params);
  const Predictor central{
      kernel, omegas,
      blr_fit(feature_map(kernel, omegas, ds.x), ds.y, sigma, lambda)};

  const PartitionPlan plan = range_partition(ds, {0.0});
  auto make_clients = [&]() {
    std::vector<ClientState> clients;
    for (std::size_t c = 0; c < plan.client_rows.size(); ++c) {
      const Dataset part = ds.select(plan.client_rows[c]);
      clients.push_back(
          ClientState{static_cast<int>(c), part.x, part.y, params, {}});
    }
    return clients;
  };
  auto phase2_only = [&](Phase1Mode p1, Phase2Mode p2,
                         std::vector<ClientState> clients) {
    RunConfig rc;
    rc.num_clients = static_cast<int>(clients.size());
    rc.phase1 = p1;
    rc.phase2 = p2;
    rc.max_rounds = 0;
    ServerState server;
    server.params = params;
    server.omegas = omegas;
    return run_fedbnr(rc, arch, clients, server, ds.x, ds.y);
  };

  const auto fed = phase2_only(Phase1Mode::Avg, Phase2Mode::Global,
                               make_clients());
  const auto local = phase2_only(Phase1Mode::Local, Phase2Mode::Local,
                                 make_clients());

  const Eigen::Index grid_n = 401;
  Matrix grid(1, grid_n);
  Vector grid_truth(grid_n);
  for (Eigen::Index i = 0; i < grid_n; ++i) {
    grid(0, i) = -5.0 + 10.0 * static_cast<double>(i) /
                            static_cast<double>(grid_n - 1);
    grid_truth[i] = truth(grid(0, i));
  }

  Fig2Result out;
  out.central_rmse = rmse(predict(central, grid).mean, grid_truth);
  out.fed_rmse = mean_model_rmse(fed.models, grid, grid_truth);
  out.local_mean_rmse = mean_model_rmse(local.models, grid, grid_truth);

  {
    const auto pred = predict(fed.models.front(), grid);
    std::ofstream curve(fs::path(out_dir) / "fig2_curve.csv");
    curve << "x,mean,lower95,upper95\n";
    for (Eigen::Index i = 0; i < grid_n; ++i) {
      const double half = 1.959963984540054 * std::sqrt(pred.variance[i]);
      curve << format_double(grid(0, i)) << ','
            << format_double(pred.mean[i]) << ','
            << format_double(pred.mean[i] - half) << ','
            << format_double(pred.mean[i] + half) << '\n';
    }
  }

  // new client joining with growing data; global model vs a model trained
  // on the new client alone. Tested on held-out noisy draws from the same
  // range, so the curve reflects robustness to small clients rather than
  // the slow 1/sqrt(n) posterior contraction.
  const Dataset pool = synthetic_1d(truth, -5.0, 5.0, 200, 0.5, seed + 99);
  const Dataset heldout = synthetic_1d(truth, -5.0, 5.0, 500, 0.5, seed + 7);
  out.sizes = {10, 20, 50, 100, 200};
  std::ofstream sizes_csv(fs::path(out_dir) / "fig2_rmse_vs_size.csv");
  sizes_csv << "size,rmse_fedbnr,rmse_local_only\n";
  for (const int s : out.sizes) {
    std::vector<Eigen::Index> first;
    for (Eigen::Index i = 0; i < s; ++i) first.push_back(i);
    const Dataset fresh = pool.select(first);

    auto clients = make_clients();
    clients.push_back(ClientState{2, fresh.x, fresh.y, params, {}});
    const auto joined =
        phase2_only(Phase1Mode::Avg, Phase2Mode::Global, std::move(clients));
    const double fed_rmse =
        mean_model_rmse(joined.models, heldout.x, heldout.y);

    const Predictor solo{
        kernel, omegas,
        blr_fit(feature_map(kernel, omegas, fresh.x), fresh.y, sigma, lambda)};
    const double solo_rmse = rmse(predict(solo, heldout.x).mean, heldout.y);

    out.fed_by_size.push_back(fed_rmse);
    out.local_by_size.push_back(solo_rmse);
    sizes_csv << s << ',' << format_double(fed_rmse) << ','
              << format_double(solo_rmse) << '\n';
  }

  log << "central rmse " << format_double(out.central_rmse) << ", fedbnr "
      << format_double(out.fed_rmse) << ", local+local "
      << format_double(out.local_mean_rmse) << "\n";
  return out;
}

UrkConfig random_urk_config(std::uint64_t seed) {
  Rng rng(mix64(seed, 0xac0));
  const int p = 1 + static_cast<int>(rng.uniform_index(4));
  const int m = 2 + static_cast<int>(rng.uniform_index(9));
  const std::uint64_t omega_seed = rng.next_u64();
  const std::uint64_t init_seed = rng.next_u64();
  const int tpl = static_cast<int>(rng.uniform_index(6));

  switch (tpl) {
    case 0:
      return rff_gaussian(0.5 + rng.uniform(), p, omega_seed, m);
    case 1:
      return exp_kernel_construction(p, omega_seed, m);
    case 2:
      return poly_kernel_construction(rng.uniform(0.0, 2.0),
                                      1 + static_cast<int>(rng.uniform_index(3)),
                                      p, omega_seed, m);
    default:
      break;
  }

  UrkConfig cfg;
  cfg.m = m;
  cfg.normalization = rng.uniform() < 0.5 ? Normalization::SqrtM
                                          : Normalization::SqrtMMinus1;
  cfg.sampler.kind = OmegaSampler::Kind::StandardNormal;
  cfg.sampler.seed = omega_seed;
  KernelNetwork& net = cfg.network;
  net.input_dim = p;

  if (tpl == 5) {
    // replicate policy on the raw inputs, no trainable layers
    cfg.sampler.dim = p;
    net.replicate = rng.uniform() < 0.5 ? ReplicatePolicy::MultiplyNoise
                                        : ReplicatePolicy::AddNoise;
    net.replicate_scale = 0.05 + 0.2 * rng.uniform();
    net.combine = rng.uniform() < 0.5 ? CombineRule::RffCosSin
                                      : CombineRule::InnerProduct;
    net.combine_nl = Nonlinearity::Tanh;
    return cfg;
  }

  // trainable extractor + shifter
  const int latent = 1 + static_cast<int>(rng.uniform_index(4));
  const int hidden = 2 + static_cast<int>(rng.uniform_index(5));
  cfg.sampler.dim = 1 + static_cast<int>(rng.uniform_index(4));
  net.extractor.push_back(
      {Matrix::Zero(hidden, p), Vector::Zero(hidden), Activation::Tanh});
  net.extractor.push_back({Matrix::Zero(latent, hidden), Vector::Zero(latent),
                           Activation::Identity});
  net.shifter.push_back({Matrix::Zero(hidden, cfg.sampler.dim),
                         Vector::Zero(hidden), Activation::Tanh});
  net.shifter.push_back({Matrix::Zero(latent, hidden), Vector::Zero(latent),
                         Activation::Identity});
  net.shifter_skip = true;
  if (tpl == 4) {
    net.combine = CombineRule::InnerProduct;
    const int pick = static_cast<int>(rng.uniform_index(3));
    net.combine_nl = pick == 0   ? Nonlinearity::Tanh
                     : pick == 1 ? Nonlinearity::Cos
                                 : Nonlinearity::Sin;
  } else {
    net.combine = CombineRule::RffCosSin;
  }
  init_weights(net, init_seed, 1.0);
  return cfg;
}

KernelCheckResult cmd_kernel_check(int m_max, std::ostream& log) {
  KernelCheckResult result;
  std::vector<int> ms;
  for (const int m : {100, 10000, 1000000}) {
    if (m <= m_max) ms.push_back(m);
  }
  if (ms.empty()) ms.push_back(std::max(2, m_max));

  struct Setup {
    std::string name;
    double box;
    int dim;
  };
  const std::vector<Setup> setups = {
      {"rff-gaussian", 1.0, 3}, {"exp", 0.5, 2}, {"poly", 1.0, 2}};

  for (const auto& setup : setups) {
    Rng pair_rng(mix64(411, setup.name.size()));
    std::vector<std::pair<Vector, Vector>> pairs;
    for (int i = 0; i < 100; ++i) {
      Vector x(setup.dim), xp(setup.dim);
      for (int f = 0; f < setup.dim; ++f) {
        x[f] = pair_rng.uniform(-setup.box, setup.box);
        xp[f] = pair_rng.uniform(-setup.box, setup.box);
      }
      pairs.emplace_back(std::move(x), std::move(xp));
    }

    KernelCheckRow row;
    row.construction = setup.name;
    row.ms = ms;
    for (const int m : ms) {
      UrkConfig cfg;
      if (setup.name == "rff-gaussian") {
        cfg = rff_gaussian(1.0, setup.dim, 2718, m);
      } else if (setup.name == "exp") {
        cfg = exp_kernel_construction(setup.dim, 2718, m);
      } else {
        cfg = poly_kernel_construction(1.0, 2, setup.dim, 2718, m);
      }
      const Matrix omegas = sample_omegas(cfg);
      double worst = 0.0;
      double worst_se_ratio = 0.0;
      for (const auto& [x, xp] : pairs) {
        const auto est = mc_kernel_estimate(cfg, omegas, x, xp);
        double truth;
        if (setup.name == "rff-gaussian") {
          truth = closed_form_gaussian(1.0, x, xp);
        } else if (setup.name == "exp") {
          truth = closed_form_exp(x, xp);
        } else {
          truth = closed_form_poly(1.0, 2, x, xp);
        }
        const double err = std::abs(est.value - truth);
        worst = std::max(worst, err);
        if (est.stderr_est > 0.0) {
          worst_se_ratio = std::max(worst_se_ratio, err / est.stderr_est);
        }
      }
      row.max_abs_err.push_back(worst);
      if (m == ms.back()) row.worst_se_ratio = worst_se_ratio;
      log << setup.name << " m=" << m << " max|err|=" << format_double(worst)
          << "\n";
    }
    row.errors_decreasing = true;
    for (std::size_t i = 1; i < row.max_abs_err.size(); ++i) {
      if (!(row.max_abs_err[i] < row.max_abs_err[i - 1])) {
        row.errors_decreasing = false;
      }
    }
    result.rows.push_back(std::move(row));
  }

  // positive semidefiniteness across random architectures
  double worst_ratio = 0.0;
  for (int i = 0; i < 50; ++i) {
    const UrkConfig cfg = random_urk_config(mix64(777, i));
    Rng rng(mix64(778, i));
    const Eigen::Index n = 2 + static_cast<Eigen::Index>(rng.uniform_index(29));
    Matrix x(cfg.network.input_dim, n);
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      for (Eigen::Index c = 0; c < x.cols(); ++c) {
        x(r, c) = rng.uniform(-1.0, 1.0);
      }
    }
    const Matrix k = urk_kernel(cfg, x, x);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
    const double ratio = eig.eigenvalues().minCoeff() / k.trace();
    worst_ratio = std::min(worst_ratio, ratio);
  }
  result.worst_min_eig_ratio = worst_ratio;
  log << "psd: min eigenvalue / trace >= " << format_double(worst_ratio)
      << " over 50 random configs\n";

  {
    const UrkConfig cfg = rff_gaussian(1.0, 3, 515, 200);
    Matrix x(3, 1);
    x << 0.3, -0.7, 1.1;
    const Matrix k = urk_kernel(cfg, x, x);
    result.rff_diag_error = std::abs(k(0, 0) - 1.0);
    log << "rff diagonal: k(x,x) = " << format_double(k(0, 0)) << "\n";
  }
  return result;
}

}  // namespace fedbnr
