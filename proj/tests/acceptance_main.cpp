// Acceptance suite: one line per criterion, nonzero exit if any fails.
// Each criterion enforces its own tolerance and wall-time budget.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "fedbnr/blr.hpp"
#include "fedbnr/data.hpp"
#include "fedbnr/experiment.hpp"
#include "fedbnr/federated.hpp"
#include "fedbnr/kernels.hpp"
#include "fedbnr/metrics.hpp"
#include "fedbnr/rng.hpp"

using namespace fedbnr;
namespace fs = std::filesystem;

namespace {

struct Check {
  bool ok = true;
  std::string detail;

  void require(bool cond, const std::string& what) {
    if (!cond && ok) {
      ok = false;
      detail = what;
    }
  }
};

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double s) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = s * rng.uniform(-1.0, 1.0);
  }
  return m;
}

Vector random_vector(Rng& rng, Eigen::Index n, double s) {
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = s * rng.uniform(-1.0, 1.0);
  return v;
}

// architectures spanning the named constructions and trainable networks,
// p up to 8, feature dimension well under 60
UrkConfig random_exactness_arch(std::uint64_t seed) {
  Rng rng(mix64(seed, 0xeac7));
  const int p = 1 + static_cast<int>(rng.uniform_index(8));
  const int m = 2 + static_cast<int>(rng.uniform_index(29));  // md up to 60
  const std::uint64_t omega_seed = rng.next_u64();
  const std::uint64_t init_seed = rng.next_u64();

  switch (rng.uniform_index(5)) {
    case 0:
      return rff_gaussian(0.5 + rng.uniform(), p, omega_seed, m);
    case 1:
      return exp_kernel_construction(std::min(p, 3), omega_seed, m);
    case 2:
      return poly_kernel_construction(
          rng.uniform(0.0, 2.0), 1 + static_cast<int>(rng.uniform_index(3)),
          p, omega_seed, m);
    default:
      break;
  }

  UrkConfig cfg;
  cfg.m = m;
  cfg.normalization = rng.uniform() < 0.5 ? Normalization::SqrtM
                                          : Normalization::SqrtMMinus1;
  cfg.sampler.dim = 1 + static_cast<int>(rng.uniform_index(5));
  cfg.sampler.seed = omega_seed;
  KernelNetwork& net = cfg.network;
  net.input_dim = p;
  const int hidden = 2 + static_cast<int>(rng.uniform_index(5));
  const int latent = 1 + static_cast<int>(rng.uniform_index(4));
  net.extractor.push_back(
      {Matrix::Zero(hidden, p), Vector::Zero(hidden), Activation::Tanh});
  net.extractor.push_back({Matrix::Zero(latent, hidden), Vector::Zero(latent),
                           Activation::Identity});
  net.shifter.push_back({Matrix::Zero(hidden, cfg.sampler.dim),
                         Vector::Zero(hidden), Activation::Tanh});
  net.shifter.push_back({Matrix::Zero(latent, hidden), Vector::Zero(latent),
                         Activation::Identity});
  net.shifter_skip = true;
  if (rng.uniform() < 0.5) {
    net.combine = CombineRule::InnerProduct;
    net.combine_nl = rng.uniform() < 0.5 ? Nonlinearity::Tanh
                                         : Nonlinearity::Cos;
  } else {
    net.combine = CombineRule::RffCosSin;
  }
  init_weights(net, init_seed, 1.0);
  return cfg;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

std::string tabular_config(const std::string& mode) {
  return std::string(R"({
    "dataset": {"type": "synthetic-tabular", "n": 1000, "noise_sigma": 0.05},
    "partition": {"type": "correlation", "num_clients": 10},
    "kernel": {"m": 50, "sampler_dim": 5, "extractor_widths": [16],
               "latent_dim": 8},
    "run": {"mode": ")") +
         mode +
         R"(", "local_epochs": 10, "max_rounds": 15, "patience": 5,
     "lr_local": 0.001},
    "seeds": [1, 2, 3], "output_dir": "unused"})";
}

// --------------------------------------------------------------------------

Check criterion1_federated_exactness() {
  Check c;
  const int ks[4] = {1, 2, 5, 17};
  for (int instance = 0; instance < 20; ++instance) {
    Rng rng(mix64(90, instance));
    const UrkConfig arch = random_exactness_arch(1000 + instance);
    const int k = ks[instance % 4];
    const Eigen::Index n =
        k + static_cast<Eigen::Index>(rng.uniform_index(500 - k));
    const Matrix x = random_matrix(rng, arch.network.input_dim, n, 1.0);
    const Vector y = random_vector(rng, n, 2.0);
    const double sigma = 0.3 + rng.uniform();
    const double lambda = 0.3 + rng.uniform();
    const Matrix omegas = sample_omegas(arch);
    const ParamVector params = pack_params(arch.network, sigma, lambda);

    // random contiguous partition with every client non-empty
    std::vector<Eigen::Index> cuts{0, n};
    while (static_cast<int>(cuts.size()) < k + 1) {
      const Eigen::Index cut =
          1 + static_cast<Eigen::Index>(rng.uniform_index(n - 1));
      if (std::find(cuts.begin(), cuts.end(), cut) == cuts.end()) {
        cuts.push_back(cut);
      }
    }
    std::sort(cuts.begin(), cuts.end());

    std::vector<ClientState> clients;
    std::vector<msgs::ScatterMatrix> scatters;
    for (int ci = 0; ci < k; ++ci) {
      const Eigen::Index lo = cuts[static_cast<std::size_t>(ci)];
      const Eigen::Index len = cuts[static_cast<std::size_t>(ci) + 1] - lo;
      clients.push_back(ClientState{ci, x.middleCols(lo, len),
                                    y.segment(lo, len), params, {}});
      scatters.push_back(msgs::wire_transfer(
          phase2_scatter(clients.back(), params, arch, omegas)));
    }
    const auto pb = msgs::wire_transfer(
        phase2_assemble(scatters, sigma, lambda, arch.feature_dim()));
    Vector w_bar = Vector::Zero(arch.feature_dim());
    for (auto& cl : clients) {
      w_bar +=
          msgs::wire_transfer(phase2_client_weights(cl, pb, sigma)).weights;
    }
    const Matrix a_fed = pb.chol_lower * pb.chol_lower.transpose();

    const auto pooled =
        blr_fit(feature_map(arch, omegas, x), y, sigma, lambda);
    const double a_rel = (a_fed - pooled.a).cwiseAbs().maxCoeff() /
                         pooled.a.cwiseAbs().maxCoeff();
    const double w_rel = (w_bar - pooled.w_bar).norm() /
                         std::max(1.0, pooled.w_bar.norm());
    c.require(a_rel < 1e-8, "precision mismatch " + std::to_string(a_rel));
    c.require(w_rel < 1e-8, "weights mismatch " + std::to_string(w_rel));

    // test-point predictions
    const Matrix x_star = random_matrix(rng, arch.network.input_dim, 5, 1.0);
    const Matrix phi_star = feature_map(arch, omegas, x_star);
    BlrPosterior fed_post;
    fed_post.a = a_fed;
    fed_post.a_chol = CholeskyFactor{pb.chol_lower};
    fed_post.w_bar = w_bar;
    fed_post.sigma = sigma;
    fed_post.lambda = lambda;
    const auto fed_pred = blr_predict(fed_post, phi_star);
    const auto pool_pred = blr_predict(pooled, phi_star);
    for (Eigen::Index j = 0; j < 5; ++j) {
      c.require(std::abs(fed_pred.mean[j] - pool_pred.mean[j]) <=
                    1e-8 * std::max(1.0, std::abs(pool_pred.mean[j])),
                "prediction mean mismatch");
      c.require(std::abs(fed_pred.variance[j] - pool_pred.variance[j]) <=
                    1e-8 * std::max(1.0, pool_pred.variance[j]),
                "prediction variance mismatch");
    }
  }
  return c;
}

Check criterion2_primal_dual() {
  Check c;
  for (int instance = 0; instance < 20; ++instance) {
    Rng rng(mix64(91, instance));
    const UrkConfig arch = random_exactness_arch(2000 + instance);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(rng.uniform_index(50));
    const Eigen::Index q = 1 + static_cast<Eigen::Index>(rng.uniform_index(8));
    const Matrix x = random_matrix(rng, arch.network.input_dim, n, 1.0);
    const Matrix x_star = random_matrix(rng, arch.network.input_dim, q, 1.0);
    const Vector y = random_vector(rng, n, 2.0);
    const double sigma = 0.3 + rng.uniform();
    const double lambda = 0.3 + rng.uniform();
    const double l2 = lambda * lambda;

    const Matrix omegas = sample_omegas(arch);
    const Matrix phi = feature_map(arch, omegas, x);
    const Matrix phi_star = feature_map(arch, omegas, x_star);

    const auto primal = blr_predict(blr_fit(phi, y, sigma, lambda), phi_star);

    Vector k_star(q);
    for (Eigen::Index j = 0; j < q; ++j) {
      k_star[j] = l2 * phi_star.col(j).squaredNorm();
    }
    const auto dual = gp_predict_dual(
        Matrix(l2 * phi.transpose() * phi),
        Matrix(l2 * phi.transpose() * phi_star), k_star, y, sigma);

    c.require((primal.mean - dual.mean).cwiseAbs().maxCoeff() < 1e-8,
              "mean disagreement");
    c.require((primal.variance - dual.variance).cwiseAbs().maxCoeff() < 1e-8,
              "variance disagreement");
  }
  return c;
}

Check criterion3_kernel_recovery(KernelCheckResult& kc) {
  Check c;
  std::ostringstream quiet;
  kc = cmd_kernel_check(1000000, quiet);
  c.require(kc.rows.size() == 3, "missing constructions");
  for (const auto& row : kc.rows) {
    c.require(row.ms.size() == 3, row.construction + ": missing m values");
    c.require(row.errors_decreasing,
              row.construction + ": error not strictly decreasing in m");
    if (row.construction == "rff-gaussian") {
      c.require(row.max_abs_err.back() <= 0.02,
                "rff max error " + std::to_string(row.max_abs_err.back()));
    }
    c.require(row.worst_se_ratio <= 4.0,
              row.construction + " exceeded 4 standard errors (" +
                  std::to_string(row.worst_se_ratio) + ")");
  }
  return c;
}

Check criterion4_psd() {
  Check c;
  for (int i = 0; i < 50; ++i) {
    const UrkConfig cfg = random_urk_config(mix64(4444, i));
    Rng rng(mix64(4445, i));
    const Eigen::Index n =
        1 + static_cast<Eigen::Index>(rng.uniform_index(30));
    const Matrix x = random_matrix(rng, cfg.network.input_dim, n, 1.0);
    const Matrix k = urk_kernel(cfg, x, x);
    Eigen::SelfAdjointEigenSolver<Matrix> eig(k);
    c.require(eig.eigenvalues().minCoeff() >= -1e-9 * k.trace(),
              "negative eigenvalue beyond tolerance at config " +
                  std::to_string(i));
  }
  return c;
}

Check criterion5_gradients() {
  Check c;
  for (int instance = 0; instance < 20; ++instance) {
    Rng rng(mix64(55, instance));
    UrkConfig arch;
    arch.m = 2 + static_cast<int>(rng.uniform_index(7));
    arch.sampler.dim = 1 + static_cast<int>(rng.uniform_index(5));
    arch.sampler.seed = rng.next_u64();
    KernelNetwork& net = arch.network;
    net.input_dim = 1 + static_cast<int>(rng.uniform_index(4));
    const int hidden = 2 + static_cast<int>(rng.uniform_index(6));
    const int latent = 1 + static_cast<int>(rng.uniform_index(4));
    net.extractor.push_back({Matrix::Zero(hidden, net.input_dim),
                             Vector::Zero(hidden), Activation::Tanh});
    net.extractor.push_back({Matrix::Zero(latent, hidden),
                             Vector::Zero(latent), Activation::Identity});
    net.shifter.push_back({Matrix::Zero(hidden, arch.sampler.dim),
                           Vector::Zero(hidden), Activation::Tanh});
    net.shifter.push_back({Matrix::Zero(latent, hidden), Vector::Zero(latent),
                           Activation::Identity});
    net.shifter_skip = true;
    switch (rng.uniform_index(3)) {
      case 0:
        net.combine = CombineRule::RffCosSin;
        break;
      case 1:
        net.combine = CombineRule::InnerProduct;
        net.combine_nl = Nonlinearity::Tanh;
        break;
      default:
        net.combine = CombineRule::InnerProduct;
        net.combine_nl = Nonlinearity::Cos;
        break;
    }
    init_weights(net, rng.next_u64(), 1.0);

    ParamVector params = pack_params(net, 0.6 + rng.uniform(),
                                     0.6 + rng.uniform());
    c.require(params.data.size() <= 200, "instance too large");
    for (Eigen::Index i = 0; i < params.data.size() - 2; ++i) {
      params.data[i] += 0.2 * rng.uniform(-1.0, 1.0);
    }

    const Eigen::Index n = 5 + static_cast<Eigen::Index>(rng.uniform_index(25));
    const Matrix x = random_matrix(rng, net.input_dim, n, 2.0);
    const Vector y = random_vector(rng, n, 2.0);
    const auto loss = make_neg_lml_loss(arch, x, y);

    const auto res = ad::evaluate_with_gradient(loss, params);
    const auto fd = ad::finite_difference_gradient(loss, params, 1e-5);
    const double rel = (res.grads.data - fd.data).norm() /
                       std::max(1e-12, fd.data.norm());
    c.require(rel < 1e-4,
              "gradient error " + std::to_string(rel) + " at instance " +
                  std::to_string(instance));
  }
  return c;
}

Check criterion6_synthetic(Fig2Result& fig2) {
  Check c;
  std::ostringstream quiet;
  fig2 = cmd_synthetic_fig2("out/acceptance_fig2_a", quiet);
  c.require(fig2.fed_rmse <= 1.5 * fig2.central_rmse,
            "federated rmse " + std::to_string(fig2.fed_rmse) +
                " vs central " + std::to_string(fig2.central_rmse));
  c.require(fig2.local_mean_rmse >= 2.0 * fig2.fed_rmse,
            "local ablation only " +
                std::to_string(fig2.local_mean_rmse / fig2.fed_rmse) +
                "x worse");
  const double at10 = fig2.fed_by_size.front();
  const double at200 = fig2.fed_by_size.back();
  const double ratio = std::max(at10, at200) / std::min(at10, at200);
  c.require(ratio <= 1.3,
            "new-client curve ratio " + std::to_string(ratio));
  return c;
}

Check criterion7_ordering() {
  Check c;
  auto mean_rmse = [](const ExperimentConfig& cfg) {
    double acc = 0.0;
    for (const auto seed : cfg.seeds) {
      acc += run_single_seed(cfg, seed).test_rmse;
    }
    return acc / static_cast<double>(cfg.seeds.size());
  };
  const double fed = mean_rmse(parse_config_json(tabular_config("avg+global")));
  const double local_global =
      mean_rmse(parse_config_json(tabular_config("local+global")));
  const double local_local =
      mean_rmse(parse_config_json(tabular_config("local+local")));

  c.require(fed < local_global,
            "fedbnr " + std::to_string(fed) + " not below local+global " +
                std::to_string(local_global));
  c.require(fed < local_local,
            "fedbnr " + std::to_string(fed) + " not below local+local " +
                std::to_string(local_local));
  c.detail = "fedbnr " + std::to_string(fed) + " < local+global " +
             std::to_string(local_global) + " < local+local " +
             std::to_string(local_local);
  return c;
}

Check criterion8_calibration() {
  Check c;
  // the model family contains the truth: targets generated from the same
  // finite feature map the protocol fits
  const double sigma_true = 0.3;
  const double lambda_true = 1.0;
  const UrkConfig arch = rff_gaussian(1.0, 2, 808, 50);
  const Matrix omegas = sample_omegas(arch);

  Rng rng(808);
  const Eigen::Index n_train = 2000, n_test = 500;
  const Matrix x = random_matrix(rng, 2, n_train + n_test, 2.0);
  const Matrix phi_all = feature_map(arch, omegas, x);
  Vector w_true(arch.feature_dim());
  for (Eigen::Index i = 0; i < w_true.size(); ++i) {
    w_true[i] = lambda_true * rng.normal();
  }
  Vector y = phi_all.transpose() * w_true;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    y[i] += sigma_true * rng.normal();
  }

  const ParamVector init =
      pack_params(arch.network, sigma_true, lambda_true);
  std::vector<ClientState> clients;
  const Eigen::Index per = n_train / 5;
  for (int ci = 0; ci < 5; ++ci) {
    clients.push_back(ClientState{ci, x.middleCols(ci * per, per),
                                  y.segment(ci * per, per), init, {}});
  }
  ServerState server;
  server.params = init;
  server.omegas = omegas;

  RunConfig rc;
  rc.num_clients = 5;
  rc.phase1 = Phase1Mode::Avg;
  rc.phase2 = Phase2Mode::Global;
  rc.max_rounds = 3;
  rc.local_epochs = 5;
  rc.lr_local = 1e-3;
  const Matrix x_val = x.middleCols(n_train - 100, 100);
  const Vector y_val = y.segment(n_train - 100, 100);
  const auto res = run_fedbnr(rc, arch, clients, server, x_val, y_val);

  const auto pred =
      predict(res.models.front(), Matrix(x.rightCols(n_test)));
  const auto curve =
      calibration_curve(pred, Vector(y.tail(n_test)), default_levels());
  const double e = ece(curve);
  c.require(e <= 0.10, "ece " + std::to_string(e));
  c.detail = "ece " + std::to_string(e) + " on 500 test points";
  return c;
}

Check criterion9_wilcoxon() {
  Check c;
  const std::vector<double> a{1, 2, 3, 4, 5};
  const std::vector<double> b{0, 1, 2, 3, 4};
  const auto r = wilcoxon_one_tailed(a, b, Alternative::AGreater);
  c.require(std::abs(r.p_value - 0.03125) < 1e-12,
            "exact p " + std::to_string(r.p_value));

  Rng rng(909);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> u(20), v(20);
    for (int i = 0; i < 20; ++i) {
      u[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0);
      v[static_cast<std::size_t>(i)] = rng.uniform(-1.0, 1.0) + 0.15;
    }
    for (const auto alt : {Alternative::AGreater, Alternative::ALess}) {
      const auto exact = wilcoxon_one_tailed(u, v, alt);
      const double n = exact.n_effective;
      const double mean = n * (n + 1.0) / 4.0;
      const double sd = std::sqrt(n * (n + 1.0) * (2.0 * n + 1.0) / 24.0);
      double approx;
      if (alt == Alternative::AGreater) {
        approx = 0.5 * std::erfc((exact.statistic - 0.5 - mean) / sd /
                                 std::numbers::sqrt2);
      } else {
        approx = 0.5 * std::erfc(-(exact.statistic + 0.5 - mean) / sd /
                                 std::numbers::sqrt2);
      }
      c.require(std::abs(exact.p_value - approx) < 0.01,
                "exact vs normal gap " +
                    std::to_string(std::abs(exact.p_value - approx)));
    }
  }
  return c;
}

Check criterion10_determinism() {
  Check c;
  std::ostringstream quiet;
  cmd_synthetic_fig2("out/acceptance_fig2_b", quiet);
  for (const char* name : {"fig2_curve.csv", "fig2_rmse_vs_size.csv"}) {
    const auto a = read_file(fs::path("out/acceptance_fig2_a") / name);
    const auto b = read_file(fs::path("out/acceptance_fig2_b") / name);
    c.require(!a.empty() && a == b,
              std::string(name) + " differs between identical runs");
  }

  const auto cfg = parse_config_json(tabular_config("avg+global"));
  const auto r1 = run_single_seed(cfg, 1);
  const auto r2 = run_single_seed(cfg, 1);
  c.require(r1.record_json == r2.record_json,
            "experiment records differ between identical runs");
  return c;
}

}  // namespace

int main() {
  struct Criterion {
    int id;
    std::string name;
    double budget_seconds;
    std::function<Check()> run;
  };

  KernelCheckResult kc;
  Fig2Result fig2;
  const std::vector<Criterion> criteria = {
      {1, "federated exactness equals centralized fit", 10.0,
       criterion1_federated_exactness},
      {2, "primal-dual predictive equivalence", 5.0, criterion2_primal_dual},
      {3, "kernel recovery at m=1e6", 60.0,
       [&kc] { return criterion3_kernel_recovery(kc); }},
      {4, "positive semidefiniteness of random kernels", 10.0,
       criterion4_psd},
      {5, "marginal likelihood gradients vs finite differences", 30.0,
       criterion5_gradients},
      {6, "two-client synthetic behavior", 300.0,
       [&fig2] { return criterion6_synthetic(fig2); }},
      {7, "desk-scale rmse ordering across ablations", 900.0,
       criterion7_ordering},
      {8, "calibration sanity on a well-specified model", 300.0,
       criterion8_calibration},
      {9, "wilcoxon exact and approximate tails", 5.0, criterion9_wilcoxon},
      {10, "byte-identical records across repeated runs", 600.0,
       criterion10_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Check check;
    try {
      check = criterion.run();
    } catch (const std::exception& e) {
      check.ok = false;
      check.detail = std::string("exception: ") + e.what();
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (elapsed > criterion.budget_seconds) {
      check.ok = false;
      check.detail = "over time budget (" + std::to_string(elapsed) + " s)";
    }
    std::printf("[%s] criterion %2d: %s (%.2f s)%s%s\n",
                check.ok ? "PASS" : "FAIL", criterion.id,
                criterion.name.c_str(), elapsed,
                check.detail.empty() ? "" : " -- ",
                check.detail.c_str());
    if (!check.ok) ++failures;
  }
  if (failures > 0) {
    std::printf("%d criterion(s) failed\n", failures);
  }
  return failures;
}
