#include "netkernel/commands.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "netkernel/bounds.hpp"
#include "netkernel/estimators.hpp"
#include "netkernel/model_io.hpp"
#include "netkernel/quadrature.hpp"
#include "netkernel/rng.hpp"
#include "netkernel/spectral.hpp"

namespace netkernel {

namespace {

using nlohmann::json;

constexpr uint64_t kSynthDataTag = 0x73796e74;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::string& header) : path_(path) {
    out_.open(path, std::ios::binary | std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write " + path);
    out_ << header << "\n";
  }
  CsvWriter& field(const std::string& v) {
    if (!first_) out_ << ",";
    out_ << v;
    first_ = false;
    return *this;
  }
  CsvWriter& field(int v) { return field(std::to_string(v)); }
  CsvWriter& field(double v) { return field(fmt(v)); }
  void endrow() {
    out_ << "\n";
    first_ = true;
  }
  void close() {
    out_.close();
    if (out_.fail()) throw std::runtime_error("write failed for " + path_);
  }

 private:
  std::string path_;
  std::ofstream out_;
  bool first_ = true;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string join_path(const std::string& dir, const std::string& name) {
  return (std::filesystem::path(dir) / name).string();
}

Network resolve_teacher(const RunConfig& cfg) {
  if (!cfg.model_path.empty()) return load_network(cfg.model_path);
  if (cfg.has_teacher) return make_teacher(cfg.teacher);
  throw std::invalid_argument("config needs either model or a teacher spec");
}

Matrix resolve_inputs(const RunConfig& cfg, const Network& teacher, int n,
                      uint64_t tag) {
  if (!cfg.data_path.empty()) {
    const Dataset data = load_dataset(cfg.data_path);
    if (data.X.cols() != teacher.input_dim())
      throw std::invalid_argument("data file dimension does not match the model");
    return data.X;
  }
  Rng rng(derive_stream(cfg.master_seed, {kSynthDataTag, tag}));
  Matrix X(n, teacher.input_dim());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < teacher.input_dim(); ++j)
      X(i, j) = rng.uniform(-cfg.budget.D_x, cfg.budget.D_x);
  return X;
}

double resolve_sigma(const RunConfig& cfg, const Network& teacher) {
  if (cfg.sigma >= 0.0) return cfg.sigma;
  Rng rng(derive_stream(cfg.master_seed, {0x73696721}));
  Matrix X(3000, teacher.input_dim());
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j)
      X(i, j) = rng.uniform(-cfg.budget.D_x, cfg.budget.D_x);
  const Vector f = forward(teacher, X);
  const double mean = f.mean();
  return cfg.sigma_mult * std::sqrt((f.array() - mean).square().mean());
}

double target_exponent(const RunConfig& cfg, const Network& teacher) {
  if (!cfg.has_teacher) return 0.0;
  if (cfg.teacher.kind == "finite_dim") return -1.0;
  if (cfg.teacher.kind == "poly_decay" || cfg.teacher.kind == "kernel_two_layer") {
    const double s = cfg.teacher.s;
    return teacher.depth() == 2 ? -1.0 / (1.0 + s) : -1.0 / (1.0 + 2.0 * s);
  }
  return 0.0;
}

CommandOutcome finish(const RunConfig& cfg, CommandOutcome out) {
  if (!out.errors.empty()) {
    out.exit_code = 1;
    json j;
    j["errors"] = out.errors;
    const std::string path = join_path(cfg.out_dir, "errors.json");
    write_text(path, j.dump(2) + "\n");
    out.outputs.push_back(path);
    std::cerr << j.dump() << "\n";
  }
  return out;
}

}  // namespace

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(std::string("config parse error: ") + e.what());
  }
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  RunConfig cfg;
  cfg.command = j.value("command", cfg.command);
  cfg.model_path = j.value("model", cfg.model_path);
  cfg.data_path = j.value("data", cfg.data_path);
  if (j.contains("teacher")) {
    const json& t = j.at("teacher");
    cfg.teacher.kind = t.value("kind", cfg.teacher.kind);
    if (t.contains("dims")) cfg.teacher.dims = t.at("dims").get<std::vector<int>>();
    cfg.teacher.d_x = t.value("d_x", cfg.teacher.d_x);
    cfg.teacher.m_ref = t.value("m_ref", cfg.teacher.m_ref);
    cfg.teacher.a = t.value("a", cfg.teacher.a);
    cfg.teacher.s = t.value("s", cfg.teacher.s);
    cfg.teacher.mix = t.value("mix", cfg.teacher.mix);
    cfg.teacher.seed = t.value("seed", cfg.teacher.seed);
    cfg.has_teacher = true;
  }
  if (j.contains("budget")) {
    const json& b = j.at("budget");
    cfg.budget.R = b.value("R", cfg.budget.R);
    cfg.budget.R_b = b.value("R_b", cfg.budget.R_b);
    cfg.budget.D_x = b.value("D_x", cfg.budget.D_x);
    cfg.budget.delta = b.value("delta", cfg.budget.delta);
  }
  cfg.sigma = j.value("sigma", cfg.sigma);
  cfg.sigma_mult = j.value("sigma_mult", cfg.sigma_mult);
  if (j.contains("n_grid")) cfg.n_grid = j.at("n_grid").get<std::vector<int>>();
  cfg.seeds = j.value("seeds", cfg.seeds);
  cfg.n_fit = j.value("n_fit", cfg.n_fit);
  cfg.n_eval = j.value("n_eval", cfg.n_eval);
  cfg.n_test = j.value("n_test", cfg.n_test);
  if (j.contains("lambdas")) cfg.lambdas = j.at("lambdas").get<std::vector<double>>();
  if (j.contains("widths")) cfg.widths = j.at("widths").get<std::vector<int>>();
  cfg.estimator = j.value("estimator", cfg.estimator);
  cfg.widths_rule = j.value("widths_rule", cfg.widths_rule);
  cfg.erm_epochs = j.value("erm_epochs", cfg.erm_epochs);
  cfg.erm_restarts = j.value("erm_restarts", cfg.erm_restarts);
  cfg.bayes_chain = j.value("bayes_chain", cfg.bayes_chain);
  cfg.bayes_burn_in = j.value("bayes_burn_in", cfg.bayes_burn_in);
  cfg.bayes_thinning = j.value("bayes_thinning", cfg.bayes_thinning);
  cfg.inject = j.value("inject", cfg.inject);
  cfg.inject_c = j.value("inject_c", cfg.inject_c);
  cfg.inject_exponent = j.value("inject_exponent", cfg.inject_exponent);
  cfg.out_dir = j.value("out", cfg.out_dir);
  cfg.master_seed = j.value("seed", cfg.master_seed);
  cfg.workers = j.value("workers", cfg.workers);
  return cfg;
}

RunConfig load_config(const std::string& path) {
  return config_from_json(read_text(path));
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["command"] = cfg.command;
  if (!cfg.model_path.empty()) j["model"] = cfg.model_path;
  if (!cfg.data_path.empty()) j["data"] = cfg.data_path;
  if (cfg.has_teacher) {
    json t;
    t["kind"] = cfg.teacher.kind;
    if (!cfg.teacher.dims.empty()) t["dims"] = cfg.teacher.dims;
    t["d_x"] = cfg.teacher.d_x;
    t["m_ref"] = cfg.teacher.m_ref;
    t["a"] = cfg.teacher.a;
    t["s"] = cfg.teacher.s;
    t["mix"] = cfg.teacher.mix;
    t["seed"] = cfg.teacher.seed;
    j["teacher"] = std::move(t);
  }
  j["budget"] = {{"R", cfg.budget.R},
                 {"R_b", cfg.budget.R_b},
                 {"D_x", cfg.budget.D_x},
                 {"delta", cfg.budget.delta}};
  j["sigma"] = cfg.sigma;
  j["sigma_mult"] = cfg.sigma_mult;
  j["n_grid"] = cfg.n_grid;
  j["seeds"] = cfg.seeds;
  j["n_fit"] = cfg.n_fit;
  j["n_eval"] = cfg.n_eval;
  j["n_test"] = cfg.n_test;
  if (!cfg.lambdas.empty()) j["lambdas"] = cfg.lambdas;
  if (!cfg.widths.empty()) j["widths"] = cfg.widths;
  j["estimator"] = cfg.estimator;
  j["widths_rule"] = cfg.widths_rule;
  j["erm_epochs"] = cfg.erm_epochs;
  j["erm_restarts"] = cfg.erm_restarts;
  j["bayes_chain"] = cfg.bayes_chain;
  j["bayes_burn_in"] = cfg.bayes_burn_in;
  j["bayes_thinning"] = cfg.bayes_thinning;
  j["inject"] = cfg.inject;
  j["inject_c"] = cfg.inject_c;
  j["inject_exponent"] = cfg.inject_exponent;
  j["out"] = cfg.out_dir;
  j["seed"] = cfg.master_seed;
  j["workers"] = cfg.workers;
  return j.dump(2) + "\n";
}

CommandOutcome cmd_analyze(const RunConfig& cfg) {
  CommandOutcome out;
  std::filesystem::create_directories(cfg.out_dir);
  Network teacher;
  try {
    teacher = resolve_teacher(cfg);
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }
  const Matrix X = resolve_inputs(cfg, teacher, cfg.n_fit, 1);
  const int L = teacher.depth();

  const std::string spec_path = join_path(cfg.out_dir, "spectrum.csv");
  const std::string dof_path = join_path(cfg.out_dir, "dof.csv");
  CsvWriter spec_csv(spec_path, "layer,j,mu");
  CsvWriter dof_csv(dof_path, "layer,lambda,dof");
  json decay = json::array();

  for (int ell = 2; ell <= L; ++ell) {
    try {
      const Spectrum spec = layer_spectrum(teacher, X, ell - 1);
      for (int jx = 0; jx < spec.mu.size(); ++jx)
        spec_csv.field(ell).field(jx + 1).field(spec.mu[jx]).endrow();
      const DofCurve curve = dof_curve(spec, default_lambda_grid(spec));
      for (size_t i = 0; i < curve.lambda.size(); ++i)
        dof_csv.field(ell).field(curve.lambda[i]).field(curve.value[i]).endrow();
      json d;
      d["layer"] = ell;
      try {
        const DecayFit f = fit_decay(spec);
        d["a"] = f.a;
        d["s"] = f.s;
        d["residual"] = f.residual;
        d["clipped"] = f.clipped;
        d["finite_rank"] = f.finite_rank;
      } catch (const std::exception& e) {
        d["error"] = e.what();
      }
      decay.push_back(std::move(d));
    } catch (const std::exception& e) {
      out.errors.push_back("layer " + std::to_string(ell) + ": " + e.what());
    }
  }
  spec_csv.close();
  dof_csv.close();
  const std::string decay_path = join_path(cfg.out_dir, "decay.json");
  write_text(decay_path, decay.dump(2) + "\n");
  out.outputs = {spec_path, dof_path, decay_path};
  return finish(cfg, out);
}

CommandOutcome cmd_plan(const RunConfig& cfg) {
  CommandOutcome out;
  std::filesystem::create_directories(cfg.out_dir);
  Network teacher;
  try {
    teacher = resolve_teacher(cfg);
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }
  const Matrix X = resolve_inputs(cfg, teacher, cfg.n_fit, 2);
  const double sigma = resolve_sigma(cfg, teacher);
  const int L = teacher.depth();
  const int d_x = teacher.input_dim();

  std::vector<Spectrum> spectra;
  for (int ell = 2; ell <= L; ++ell)
    spectra.push_back(layer_spectrum(teacher, X, ell - 1));

  const std::string plan_path = join_path(cfg.out_dir, "plan.csv");
  CsvWriter plan_csv(plan_path, "n,layer,lambda,dof,m_required,converged");
  json reports = json::array();

  for (int n : cfg.n_grid) {
    std::vector<int> widths = {d_x};
    std::vector<double> lambdas;
    for (int ell = 2; ell <= L; ++ell) {
      const ParamFactor factor = L == 2 ? two_layer_factor(d_x) : square_factor();
      BalanceResult bal;
      try {
        bal = balance_lambda(n, spectra[static_cast<size_t>(ell - 2)],
                             cfg.budget.delta, factor);
      } catch (const std::exception& e) {
        out.errors.push_back("n " + std::to_string(n) + " layer " +
                             std::to_string(ell) + ": " + e.what());
        continue;
      }
      plan_csv.field(n)
          .field(ell)
          .field(bal.lambda)
          .field(bal.N)
          .field(bal.m)
          .field(bal.converged ? 1 : 0);
      plan_csv.endrow();
      widths.push_back(bal.m);
      lambdas.push_back(bal.lambda);
    }
    widths.push_back(1);
    if (static_cast<int>(widths.size()) != L + 1) continue;
    const BoundReport rep = make_bound_report(n, sigma, cfg.budget, widths, lambdas);
    json r;
    r["n"] = rep.n;
    r["sigma"] = rep.sigma;
    r["sigma_floored"] = rep.sigma_floored;
    r["widths"] = rep.widths;
    r["lambdas"] = rep.lambdas;
    r["r_hat_inf"] = rep.r_hat_inf;
    r["g_hat"] = rep.g_hat;
    r["delta1"] = rep.delta1;
    r["delta2"] = rep.delta2;
    r["eps_n"] = rep.eps_n;
    r["eps_tilde_n"] = rep.eps_tilde_n;
    r["erm_bound"] = rep.erm_bound;
    r["bayes_bound"] = rep.bayes_bound;
    r["table_row"] = rep.table_row;
    r["table_value"] = rep.table_value;
    reports.push_back(std::move(r));
  }
  plan_csv.close();
  const std::string bounds_path = join_path(cfg.out_dir, "bounds.json");
  write_text(bounds_path, reports.dump(2) + "\n");
  out.outputs = {plan_path, bounds_path};
  return finish(cfg, out);
}

CommandOutcome cmd_compress(const RunConfig& cfg) {
  CommandOutcome out;
  std::filesystem::create_directories(cfg.out_dir);
  Network teacher;
  try {
    teacher = resolve_teacher(cfg);
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }
  const Matrix X_fit = resolve_inputs(cfg, teacher, cfg.n_fit, 3);
  Rng eval_rng(derive_stream(cfg.master_seed, {kSynthDataTag, 4}));
  Matrix X_eval(cfg.n_eval, teacher.input_dim());
  for (int i = 0; i < X_eval.rows(); ++i)
    for (int j = 0; j < X_eval.cols(); ++j)
      X_eval(i, j) = eval_rng.uniform(-cfg.budget.D_x, cfg.budget.D_x);

  CompressionPlan plan;
  try {
    if (!cfg.lambdas.empty())
      plan = plan_compression(teacher, X_fit, cfg.lambdas, cfg.budget.delta,
                              cfg.master_seed);
    else if (!cfg.widths.empty())
      plan = plan_compression_widths(teacher, X_fit, cfg.widths, cfg.budget.delta,
                                     cfg.master_seed);
    else
      throw std::invalid_argument("compress needs lambdas or widths");
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }

  CompressionResult res;
  try {
    res = compress_network(teacher, plan, X_fit, X_eval, cfg.budget);
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }

  const std::string model_path = join_path(cfg.out_dir, "compressed_model.json");
  save_network(res.net, model_path);

  const std::string report_path = join_path(cfg.out_dir, "compress_report.csv");
  CsvWriter rep_csv(report_path,
                    "layer,lambda,m,err_emp,err_bound,prop_bound,w_fro2,w_cap,"
                    "b_norm,b_cap,norm_ok");
  for (const LayerCompressionReport& lr : res.report.layers) {
    rep_csv.field(lr.layer)
        .field(lr.lambda)
        .field(lr.m)
        .field(lr.err_emp)
        .field(lr.err_bound)
        .field(lr.prop_bound)
        .field(lr.w_fro2)
        .field(lr.w_cap)
        .field(lr.b_norm)
        .field(lr.b_cap)
        .field(lr.norm_ok ? 1 : 0);
    rep_csv.endrow();
  }
  rep_csv.close();

  json summary;
  summary["end_to_end_sq"] = res.report.end_to_end_sq;
  summary["delta1_pred"] = res.report.delta1_pred;
  summary["ok"] = res.report.ok;
  summary["errors"] = res.report.errors;
  const std::string summary_path = join_path(cfg.out_dir, "compress_summary.json");
  write_text(summary_path, summary.dump(2) + "\n");

  out.outputs = {model_path, report_path, summary_path};
  for (const std::string& e : res.report.errors) out.errors.push_back(e);
  return finish(cfg, out);
}

CommandOutcome cmd_experiment(const RunConfig& cfg) {
  CommandOutcome out;
  std::filesystem::create_directories(cfg.out_dir);

  const std::string cells_path = join_path(cfg.out_dir, "cells.csv");
  const std::string summary_path = join_path(cfg.out_dir, "ratefit.json");

  if (cfg.inject) {
    // test mode: the configured power law stands in for measured errors
    std::vector<double> errs;
    for (int n : cfg.n_grid)
      errs.push_back(cfg.inject_c *
                     std::pow(static_cast<double>(n), cfg.inject_exponent));
    const RateFit fit = fit_rate(cfg.n_grid, errs);
    CsvWriter cells_csv(cells_path, "estimator,teacher,n,seed,mse,stderr");
    for (size_t i = 0; i < cfg.n_grid.size(); ++i)
      cells_csv.field("injected")
          .field("injected")
          .field(cfg.n_grid[i])
          .field(0)
          .field(errs[i])
          .field(0.0)
          .endrow();
    cells_csv.close();
    json summary;
    summary["slope"] = fit.slope;
    summary["slope_stderr"] = fit.slope_stderr;
    summary["target_exponent"] = cfg.inject_exponent;
    summary["n_grid"] = fit.n_grid;
    summary["mean_errors"] = fit.mean_errors;
    summary["dropped_first"] = false;
    write_text(summary_path, json::array({summary}).dump(2) + "\n");
    out.outputs = {cells_path, summary_path};
    return finish(cfg, out);
  }

  Network teacher;
  try {
    teacher = resolve_teacher(cfg);
  } catch (const std::exception& e) {
    out.errors.push_back(e.what());
    return finish(cfg, out);
  }
  const std::string teacher_name = cfg.has_teacher ? cfg.teacher.kind : "model";

  std::vector<std::string> estimators;
  if (cfg.estimator == "both")
    estimators = {"erm", "bayes"};
  else
    estimators = {cfg.estimator};

  CsvWriter cells_csv(cells_path, "estimator,teacher,n,seed,mse,stderr");
  json summaries = json::array();
  for (const std::string& est : estimators) {
    SweepConfig sw;
    sw.n_grid = cfg.n_grid;
    sw.seeds = cfg.seeds;
    if (est == "erm")
      sw.estimator = EstimatorKind::kErm;
    else if (est == "bayes")
      sw.estimator = EstimatorKind::kBayes;
    else {
      out.errors.push_back("unknown estimator: " + est);
      continue;
    }
    sw.widths_rule =
        cfg.widths_rule == "fixed" ? WidthsRule::kFixed : WidthsRule::kBalanced;
    sw.fixed_widths = cfg.widths;
    sw.sigma = cfg.sigma;
    sw.sigma_mult = cfg.sigma_mult;
    sw.D_x = cfg.budget.D_x;
    sw.n_test = cfg.n_test;
    sw.master_seed = cfg.master_seed;
    sw.erm.epochs = cfg.erm_epochs;
    sw.erm.restarts = cfg.erm_restarts;
    sw.bayes.chain_length = cfg.bayes_chain;
    sw.bayes.burn_in = cfg.bayes_burn_in;
    sw.bayes.thinning = cfg.bayes_thinning;
    sw.workers = cfg.workers;

    RateFit fit;
    try {
      fit = rate_sweep(teacher, sw);
    } catch (const std::exception& e) {
      out.errors.push_back(est + ": " + std::string(e.what()));
      continue;
    }
    for (const SweepCell& cell : fit.cells)
      cells_csv.field(est)
          .field(teacher_name)
          .field(cell.n)
          .field(cell.seed_index)
          .field(cell.mse)
          .field(cell.stderr_)
          .endrow();
    json summary;
    summary["estimator"] = est;
    summary["teacher"] = teacher_name;
    summary["slope"] = fit.slope;
    summary["slope_stderr"] = fit.slope_stderr;
    summary["target_exponent"] = target_exponent(cfg, teacher);
    summary["n_grid"] = fit.n_grid;
    summary["mean_errors"] = fit.mean_errors;
    summary["dropped_first"] = fit.dropped_first;
    summaries.push_back(std::move(summary));
  }
  cells_csv.close();
  write_text(summary_path, summaries.dump(2) + "\n");
  out.outputs = {cells_path, summary_path};
  return finish(cfg, out);
}

CommandOutcome run_command(const RunConfig& cfg) {
  if (cfg.command == "analyze") return cmd_analyze(cfg);
  if (cfg.command == "plan") return cmd_plan(cfg);
  if (cfg.command == "compress") return cmd_compress(cfg);
  if (cfg.command == "experiment") return cmd_experiment(cfg);
  CommandOutcome out;
  out.errors.push_back("unknown command: " + cfg.command);
  out.exit_code = 1;
  std::cerr << "{\"errors\":[\"unknown command: " << cfg.command << "\"]}\n";
  return out;
}

}  // namespace netkernel
