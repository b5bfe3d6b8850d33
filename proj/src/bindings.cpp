#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "fedbnr/blr.hpp"
#include "fedbnr/data.hpp"
#include "fedbnr/experiment.hpp"
#include "fedbnr/kernels.hpp"
#include "fedbnr/metrics.hpp"

namespace py = pybind11;
using namespace fedbnr;

namespace {

Alternative parse_alternative(const std::string& s) {
  if (s == "a_greater") return Alternative::AGreater;
  if (s == "a_less") return Alternative::ALess;
  throw std::invalid_argument("alternative must be 'a_greater' or 'a_less'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() =
      "Federated Bayesian neural regression: random-feature kernels, exact "
      "primal-space inference, and the two-phase federated protocol.";

  py::class_<UrkConfig>(m, "UrkConfig")
      .def_property_readonly("m", [](const UrkConfig& c) { return c.m; })
      .def_property_readonly(
          "feature_dim", [](const UrkConfig& c) { return c.feature_dim(); })
      .def_property_readonly("input_dim", [](const UrkConfig& c) {
        return c.network.input_dim;
      });

  m.def("rff_gaussian", &rff_gaussian, py::arg("lengthscale"), py::arg("dim"),
        py::arg("seed") = 0, py::arg("m") = 50);
  m.def("exp_kernel_construction", &exp_kernel_construction, py::arg("dim"),
        py::arg("seed") = 0, py::arg("m") = 50);
  m.def("poly_kernel_construction", &poly_kernel_construction, py::arg("c"),
        py::arg("n"), py::arg("dim"), py::arg("seed") = 0, py::arg("m") = 50);

  m.def("sample_omegas", &sample_omegas, py::arg("config"));
  m.def("feature_map",
        py::overload_cast<const UrkConfig&, const Matrix&>(&feature_map),
        py::arg("config"), py::arg("x"));
  m.def("urk_kernel", &urk_kernel, py::arg("config"), py::arg("x"),
        py::arg("xp"));

  m.def("closed_form_gaussian", &closed_form_gaussian, py::arg("lengthscale"),
        py::arg("x"), py::arg("xp"));
  m.def("closed_form_exp", &closed_form_exp, py::arg("x"), py::arg("xp"));
  m.def("closed_form_poly", &closed_form_poly, py::arg("c"), py::arg("n"),
        py::arg("x"), py::arg("xp"));
  m.def(
      "mc_kernel_estimate",
      [](const UrkConfig& cfg, const Vector& x, const Vector& xp) {
        const auto est = mc_kernel_estimate(cfg, x, xp);
        return py::make_tuple(est.value, est.stderr_est);
      },
      py::arg("config"), py::arg("x"), py::arg("xp"));

  py::class_<BlrPosterior>(m, "BlrPosterior")
      .def_property_readonly("a",
                             [](const BlrPosterior& p) { return p.a; })
      .def_property_readonly("w_bar",
                             [](const BlrPosterior& p) { return p.w_bar; })
      .def_property_readonly("sigma",
                             [](const BlrPosterior& p) { return p.sigma; })
      .def_property_readonly("lam",
                             [](const BlrPosterior& p) { return p.lambda; })
      .def_property_readonly("dim",
                             [](const BlrPosterior& p) { return p.dim(); });

  m.def("blr_fit", &blr_fit, py::arg("phi"), py::arg("y"), py::arg("sigma"),
        py::arg("lam"));
  m.def(
      "blr_predict",
      [](const BlrPosterior& post, const Matrix& phi_star) {
        const auto pred = blr_predict(post, phi_star);
        return py::make_tuple(pred.mean, pred.variance);
      },
      py::arg("posterior"), py::arg("phi_star"));
  m.def("blr_log_marginal", &blr_log_marginal, py::arg("phi"), py::arg("y"),
        py::arg("sigma"), py::arg("lam"));
  m.def(
      "gp_predict_dual",
      [](const Matrix& k_train, const Matrix& k_cross,
         const Vector& k_star_diag, const Vector& y, double sigma) {
        const auto pred =
            gp_predict_dual(k_train, k_cross, k_star_diag, y, sigma);
        return py::make_tuple(pred.mean, pred.variance);
      },
      py::arg("k_train"), py::arg("k_cross"), py::arg("k_star_diag"),
      py::arg("y"), py::arg("sigma"));

  m.def("rmse", &rmse, py::arg("pred_means"), py::arg("targets"));
  m.def(
      "calibration_curve",
      [](const Vector& mean, const Vector& variance, const Vector& targets,
         std::vector<double> levels) {
        if (levels.empty()) levels = default_levels();
        const auto curve =
            calibration_curve({mean, variance}, targets, levels);
        return py::make_tuple(curve.levels, curve.coverage);
      },
      py::arg("mean"), py::arg("variance"), py::arg("targets"),
      py::arg("levels") = std::vector<double>{});
  m.def(
      "calibration_metrics",
      [](const Vector& mean, const Vector& variance, const Vector& targets) {
        const auto curve =
            calibration_curve({mean, variance}, targets, default_levels());
        return py::make_tuple(ece(curve), mce(curve), brier(curve));
      },
      py::arg("mean"), py::arg("variance"), py::arg("targets"),
      "Returns (ece, mce, brier) on the default level grid.");
  m.def(
      "wilcoxon_one_tailed",
      [](const std::vector<double>& a, const std::vector<double>& b,
         const std::string& alternative) {
        const auto r = wilcoxon_one_tailed(a, b, parse_alternative(alternative));
        return py::make_tuple(r.statistic, r.p_value, r.n_effective);
      },
      py::arg("a"), py::arg("b"), py::arg("alternative") = "a_greater");

  m.def(
      "run_seed",
      [](const std::string& config_json, std::uint64_t seed) {
        const auto config = parse_config_json(config_json);
        return run_single_seed(config, seed).record_json;
      },
      py::arg("config_json"), py::arg("seed"),
      "Runs one seed of an experiment config and returns the JSON record.");
  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        const auto config = parse_config_json(config_json);
        std::ostringstream log;
        cmd_run(config, log);
        return log.str();
      },
      py::arg("config_json"),
      "Runs every seed, writing records and the summary CSV to the config's "
      "output_dir.");
}
