// Command-line entry point: generate-data, run, compare, check-pe.

#include "ddmpc/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char ** argv)
{
  CLI::App app{"Data-driven MPC experiments"};
  app.require_subcommand(1);

  std::string config_path, out_path, data_path, dir_a, dir_b;
  int order = 0;

  auto * gen = app.add_subcommand("generate-data", "simulate the plant under a PE input and write the data set");
  gen->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
  gen->add_option("--out", out_path, "output directory")->required();

  auto * run = app.add_subcommand("run", "closed-loop runs for every configured variant and seed");
  run->add_option("--config", config_path, "experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--data", data_path, "data directory")->required()->check(CLI::ExistingPath);
  run->add_option("--out", out_path, "output directory")->required();

  auto * cmp = app.add_subcommand("compare", "compare two run directories");
  cmp->add_option("--a", dir_a, "first run directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--b", dir_b, "second run directory")->required()->check(CLI::ExistingDirectory);
  cmp->add_option("--out", out_path, "report JSON; the merged CSV goes next to it")->required();

  auto * pe = app.add_subcommand("check-pe", "persistency of excitation of a data file");
  pe->add_option("--data", data_path, "data CSV or directory")->required()->check(CLI::ExistingPath);
  pe->add_option("--order", order, "Hankel depth")->required()->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      ddmpc::cmd_generate_data(ddmpc::load_experiment_config(config_path), out_path, std::cout);
      return 0;
    }
    if (*run) { return ddmpc::cmd_run(ddmpc::load_experiment_config(config_path), data_path, out_path, std::cout, std::cerr); }
    if (*cmp) {
      ddmpc::cmd_compare(dir_a, dir_b, out_path, std::cout);
      return 0;
    }
    if (*pe) { return ddmpc::cmd_check_pe(data_path, order, std::cout); }
  } catch (const ddmpc::PersistencyError & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception & e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
