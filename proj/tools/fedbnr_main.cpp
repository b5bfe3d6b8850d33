#include <exception>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "fedbnr/experiment.hpp"

int main(int argc, char** argv) {
  CLI::App app{"FedBNR experiment runner"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand(
      "run", "Run a federated regression experiment from a JSON config");
  run->add_option("config", config_path, "Path to the experiment config")
      ->required();

  std::string fig2_out = "out/fig2";
  auto* fig2 = app.add_subcommand(
      "synthetic-fig2",
      "Two-client synthetic experiment: predictive curve and "
      "RMSE-vs-new-client-size files");
  fig2->add_option("--out", fig2_out, "Output directory");

  int m_max = 1000000;
  auto* kcheck = app.add_subcommand(
      "kernel-check",
      "Monte-Carlo recovery and PSD report for the built-in constructions");
  kcheck->add_option("--m-max", m_max, "Largest sample count to test");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) {
      const auto config = fedbnr::load_config(config_path);
      fedbnr::cmd_run(config, std::cout);
    } else if (fig2->parsed()) {
      fedbnr::cmd_synthetic_fig2(fig2_out, std::cout);
    } else if (kcheck->parsed()) {
      fedbnr::cmd_kernel_check(m_max, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
