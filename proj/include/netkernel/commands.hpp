#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "netkernel/network.hpp"

namespace netkernel {

// Parsed run manifest: one JSON config file, with every CLI flag overriding
// exactly one field.
struct RunConfig {
  std::string command;  // analyze | plan | compress | experiment

  std::string model_path;  // teacher from file; otherwise the synthetic spec
  TeacherSpec teacher;
  bool has_teacher = false;

  std::string data_path;  // dataset from file; otherwise synthetic draws

  NormBudget budget;
  double sigma = -1.0;  // < 0: sigma_mult * teacher output std
  double sigma_mult = 1.0;

  std::vector<int> n_grid = {64, 128, 256, 512, 1024, 2048, 4096};
  int seeds = 5;
  int n_fit = 2048;
  int n_eval = 4096;
  int n_test = 4096;

  std::vector<double> lambdas;  // compress: per-layer regularization levels
  std::vector<int> widths;      // compress: explicit widths; experiment: fixed chain

  std::string estimator = "erm";        // erm | bayes | both
  std::string widths_rule = "balanced"; // balanced | fixed
  int erm_epochs = 4000;
  int erm_restarts = 5;
  int bayes_chain = 20000;
  int bayes_burn_in = 5000;
  int bayes_thinning = 20;

  // test mode: skip fitting and inject e_n = c * n^exponent into the rate fit
  bool inject = false;
  double inject_c = 1.0;
  double inject_exponent = -1.0;

  std::string out_dir = ".";
  uint64_t master_seed = 0;
  int workers = 0;
};

RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::string& path);
std::string config_to_json(const RunConfig& cfg);

struct CommandOutcome {
  int exit_code = 0;
  std::vector<std::string> errors;   // machine-readable failure list
  std::vector<std::string> outputs;  // files written
};

// Per-layer eigenvalue and DoF-curve CSVs plus an eigendecay summary.
CommandOutcome cmd_analyze(const RunConfig& cfg);
// Width planning: balanced lambda per layer and n, plus bound reports.
CommandOutcome cmd_plan(const RunConfig& cfg);
// Kernel-quadrature compression: compressed model plus audit report.
CommandOutcome cmd_compress(const RunConfig& cfg);
// Rate sweeps per (teacher, estimator) pair: cell CSV plus RateFit summary.
CommandOutcome cmd_experiment(const RunConfig& cfg);

// Dispatch on cfg.command; unknown commands come back as a failed outcome.
CommandOutcome run_command(const RunConfig& cfg);

}  // namespace netkernel
