#include <cstdint>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "netkernel/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"kernel-spectrum analysis, quadrature compression, and rate sweeps"};

  std::string command;
  std::string config_path;
  std::string model_path;
  std::string data_path;
  std::string out_dir;
  uint64_t seed = 0;
  double sigma = 0.0;
  double delta = 0.0;
  std::vector<int> n_grid;
  int seeds = 0;
  std::vector<int> widths;
  std::vector<double> lambdas;
  int workers = 0;

  app.add_option("command", command, "analyze | plan | compress | experiment");
  app.add_option("--config", config_path, "JSON run manifest");
  auto* opt_model = app.add_option("--model", model_path, "teacher model file");
  auto* opt_data = app.add_option("--data", data_path, "dataset file");
  auto* opt_out = app.add_option("--out", out_dir, "output directory");
  auto* opt_seed = app.add_option("--seed", seed, "master seed");
  auto* opt_sigma = app.add_option("--sigma", sigma, "noise level");
  auto* opt_delta = app.add_option("--delta", delta, "confidence parameter");
  auto* opt_ngrid = app.add_option("--n-grid", n_grid, "sample-size grid");
  auto* opt_seeds = app.add_option("--seeds", seeds, "seeds per grid point");
  auto* opt_widths = app.add_option("--widths", widths, "per-layer widths");
  auto* opt_lambda = app.add_option("--lambda", lambdas, "per-layer lambdas");
  auto* opt_workers = app.add_option("--workers", workers, "worker threads");

  CLI11_PARSE(app, argc, argv);

  netkernel::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = netkernel::load_config(config_path);
  } catch (const std::exception& e) {
    std::cerr << "{\"errors\":[\"" << e.what() << "\"]}\n";
    return 1;
  }
  if (!command.empty()) cfg.command = command;
  if (*opt_model) cfg.model_path = model_path;
  if (*opt_data) cfg.data_path = data_path;
  if (*opt_out) cfg.out_dir = out_dir;
  if (*opt_seed) cfg.master_seed = seed;
  if (*opt_sigma) cfg.sigma = sigma;
  if (*opt_delta) cfg.budget.delta = delta;
  if (*opt_ngrid) cfg.n_grid = n_grid;
  if (*opt_seeds) cfg.seeds = seeds;
  if (*opt_widths) cfg.widths = widths;
  if (*opt_lambda) cfg.lambdas = lambdas;
  if (*opt_workers) cfg.workers = workers;

  if (cfg.command.empty()) {
    std::cerr << "{\"errors\":[\"no command given\"]}\n";
    return 1;
  }

  try {
    const netkernel::CommandOutcome outcome = netkernel::run_command(cfg);
    for (const std::string& path : outcome.outputs)
      std::cerr << "wrote " << path << "\n";
    return outcome.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "{\"errors\":[\"" << e.what() << "\"]}\n";
    return 1;
  }
}
