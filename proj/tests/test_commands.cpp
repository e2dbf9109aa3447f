#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "json.hpp"
#include "netkernel/bounds.hpp"
#include "netkernel/commands.hpp"
#include "netkernel/model_io.hpp"
#include "netkernel/network.hpp"
#include "test_support.hpp"

using namespace netkernel;
using nlohmann::json;
using testsup::close_rel;
using testsup::slurp;
using testsup::TempDir;

namespace {

std::vector<std::string> csv_lines(const std::string& path) {
  std::istringstream in(slurp(path));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  return lines;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::istringstream in(line);
  std::string cur;
  while (std::getline(in, cur, ',')) out.push_back(cur);
  return out;
}

bool exists(const std::string& path) { return std::filesystem::exists(path); }

// two identity layers of width 1: a single-node toy whose layer kernel is the
// scalar E[x^2]
std::string write_toy_model(const TempDir& dir) {
  Network net;
  net.activation = Activation::kIdentity;
  Layer l;
  l.W = Matrix(1, 1);
  l.W << 1.0;
  l.b = Vector(1);
  l.b << 0.0;
  net.layers = {l, l};
  const std::string path = dir.file("toy_model.json");
  save_network(net, path);
  return path;
}

}  // namespace

TEST_CASE("config json round trip preserves every field") {
  RunConfig cfg;
  cfg.command = "plan";
  cfg.model_path = "m.json";
  cfg.data_path = "d.json";
  cfg.teacher.kind = "poly_decay";
  cfg.teacher.dims = {1, 4, 1};
  cfg.teacher.d_x = 6;
  cfg.teacher.m_ref = 128;
  cfg.teacher.a = 1.5;
  cfg.teacher.s = 0.4;
  cfg.teacher.mix = "decay";
  cfg.teacher.seed = 77;
  cfg.has_teacher = true;
  cfg.budget.R = 2.5;
  cfg.budget.R_b = 0.7;
  cfg.budget.D_x = 1.3;
  cfg.budget.delta = 0.2;
  cfg.sigma = 0.4;
  cfg.sigma_mult = 2.0;
  cfg.n_grid = {10, 20};
  cfg.seeds = 7;
  cfg.n_fit = 99;
  cfg.n_eval = 111;
  cfg.n_test = 222;
  cfg.lambdas = {0.1, 0.01};
  cfg.widths = {4, 5};
  cfg.estimator = "both";
  cfg.widths_rule = "fixed";
  cfg.erm_epochs = 12;
  cfg.erm_restarts = 2;
  cfg.bayes_chain = 500;
  cfg.bayes_burn_in = 100;
  cfg.bayes_thinning = 5;
  cfg.inject = true;
  cfg.inject_c = 3.5;
  cfg.inject_exponent = -0.6;
  cfg.out_dir = "somewhere";
  cfg.master_seed = 42;
  cfg.workers = 3;

  const RunConfig back = config_from_json(config_to_json(cfg));
  CHECK(back.command == cfg.command);
  CHECK(back.model_path == cfg.model_path);
  CHECK(back.data_path == cfg.data_path);
  CHECK(back.has_teacher);
  CHECK(back.teacher.kind == cfg.teacher.kind);
  CHECK(back.teacher.dims == cfg.teacher.dims);
  CHECK(back.teacher.d_x == cfg.teacher.d_x);
  CHECK(back.teacher.m_ref == cfg.teacher.m_ref);
  CHECK(back.teacher.a == cfg.teacher.a);
  CHECK(back.teacher.s == cfg.teacher.s);
  CHECK(back.teacher.mix == cfg.teacher.mix);
  CHECK(back.teacher.seed == cfg.teacher.seed);
  CHECK(back.budget.R == cfg.budget.R);
  CHECK(back.budget.R_b == cfg.budget.R_b);
  CHECK(back.budget.D_x == cfg.budget.D_x);
  CHECK(back.budget.delta == cfg.budget.delta);
  CHECK(back.sigma == cfg.sigma);
  CHECK(back.sigma_mult == cfg.sigma_mult);
  CHECK(back.n_grid == cfg.n_grid);
  CHECK(back.seeds == cfg.seeds);
  CHECK(back.n_fit == cfg.n_fit);
  CHECK(back.n_eval == cfg.n_eval);
  CHECK(back.n_test == cfg.n_test);
  CHECK(back.lambdas == cfg.lambdas);
  CHECK(back.widths == cfg.widths);
  CHECK(back.estimator == cfg.estimator);
  CHECK(back.widths_rule == cfg.widths_rule);
  CHECK(back.erm_epochs == cfg.erm_epochs);
  CHECK(back.erm_restarts == cfg.erm_restarts);
  CHECK(back.bayes_chain == cfg.bayes_chain);
  CHECK(back.bayes_burn_in == cfg.bayes_burn_in);
  CHECK(back.bayes_thinning == cfg.bayes_thinning);
  CHECK(back.inject == cfg.inject);
  CHECK(back.inject_c == cfg.inject_c);
  CHECK(back.inject_exponent == cfg.inject_exponent);
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(back.master_seed == cfg.master_seed);
  CHECK(back.workers == cfg.workers);
}

TEST_CASE("config parsing applies defaults and rejects junk") {
  const RunConfig cfg = config_from_json("{}");
  CHECK(cfg.command.empty());
  CHECK(!cfg.has_teacher);
  CHECK(cfg.n_grid == std::vector<int>{64, 128, 256, 512, 1024, 2048, 4096});
  CHECK(cfg.budget.R == 1.0);
  CHECK(cfg.budget.delta == 0.1);
  CHECK(cfg.estimator == "erm");
  CHECK(cfg.sigma == -1.0);

  CHECK_THROWS_AS(config_from_json("{boom"), std::invalid_argument);
  CHECK_THROWS_AS(config_from_json("[1, 2]"), std::invalid_argument);

  TempDir tmp("cfgfile");
  const std::string path = tmp.file("run.json");
  {
    std::ofstream out(path);
    out << "{\"command\": \"analyze\", \"seed\": 9}";
  }
  const RunConfig loaded = load_config(path);
  CHECK(loaded.command == "analyze");
  CHECK(loaded.master_seed == 9);
  CHECK_THROWS_AS(load_config(tmp.file("missing.json")), std::runtime_error);
}

TEST_CASE("analyze on a one-node identity model") {
  TempDir tmp("cmd_analyze");
  RunConfig cfg;
  cfg.command = "analyze";
  cfg.model_path = write_toy_model(tmp);
  cfg.n_fit = 256;
  cfg.out_dir = tmp.file("out_a");
  const CommandOutcome out = run_command(cfg);
  CHECK(out.exit_code == 0);
  CHECK(out.errors.empty());
  REQUIRE(out.outputs.size() == 3);

  const std::string spec_path = tmp.file("out_a/spectrum.csv");
  const std::string dof_path = tmp.file("out_a/dof.csv");
  const std::string decay_path = tmp.file("out_a/decay.json");
  REQUIRE(exists(spec_path));
  REQUIRE(exists(dof_path));
  REQUIRE(exists(decay_path));

  const auto spec_rows = csv_lines(spec_path);
  REQUIRE(spec_rows.size() == 2);
  CHECK(spec_rows[0] == "layer,j,mu");
  const auto spec_f = split_csv(spec_rows[1]);
  REQUIRE(spec_f.size() == 3);
  CHECK(spec_f[0] == "2");
  CHECK(spec_f[1] == "1");
  const double mu = std::stod(spec_f[2]);
  // identity activation, width 1: the kernel eigenvalue is the sample E[x^2]
  // for x uniform on [-1, 1]
  CHECK(std::abs(mu - 1.0 / 3.0) <= 0.1);

  const auto dof_rows = csv_lines(dof_path);
  REQUIRE(dof_rows.size() >= 3);
  CHECK(dof_rows[0] == "layer,lambda,dof");
  double prev_lambda = 0.0;
  double prev_dof = 2.0;
  for (size_t i = 1; i < dof_rows.size(); ++i) {
    const auto f = split_csv(dof_rows[i]);
    REQUIRE(f.size() == 3);
    CHECK(f[0] == "2");
    const double lam = std::stod(f[1]);
    const double dof_v = std::stod(f[2]);
    CHECK(lam > prev_lambda);
    CHECK(dof_v < prev_dof);
    prev_lambda = lam;
    prev_dof = dof_v;
    if (i == 1) {
      CHECK(dof_v >= 0.85);
      CHECK(dof_v <= 1.0 + 1e-9);
    }
    if (i + 1 == dof_rows.size()) CHECK(dof_v <= 0.1);
  }

  const json decay = json::parse(slurp(decay_path));
  REQUIRE(decay.is_array());
  REQUIRE(decay.size() == 1);
  CHECK(decay[0]["layer"] == 2);
  CHECK(decay[0].contains("error"));  // one eigenvalue is too thin to fit

  // rerun into a second directory: byte-identical outputs
  RunConfig cfg2 = cfg;
  cfg2.out_dir = tmp.file("out_b");
  const CommandOutcome out2 = run_command(cfg2);
  CHECK(out2.exit_code == 0);
  CHECK(slurp(tmp.file("out_b/spectrum.csv")) == slurp(spec_path));
  CHECK(slurp(tmp.file("out_b/dof.csv")) == slurp(dof_path));
  CHECK(slurp(tmp.file("out_b/decay.json")) == slurp(decay_path));
}

TEST_CASE("plan balances lambda per n and echoes bound reports") {
  TempDir tmp("cmd_plan");
  RunConfig cfg;
  cfg.command = "plan";
  cfg.teacher.kind = "kernel_two_layer";
  cfg.teacher.d_x = 3;
  cfg.teacher.m_ref = 32;
  cfg.teacher.seed = 5;
  cfg.has_teacher = true;
  cfg.n_grid = {100, 1000, 10000};
  cfg.n_fit = 256;
  cfg.sigma = 0.5;
  cfg.out_dir = tmp.file("out");
  const CommandOutcome out = run_command(cfg);
  REQUIRE(out.exit_code == 0);
  CHECK(out.errors.empty());

  const auto rows = csv_lines(tmp.file("out/plan.csv"));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "n,layer,lambda,dof,m_required,converged");
  double prev_lambda = 1e300;
  int prev_m = 0;
  std::vector<double> lambdas;
  std::vector<int> ms;
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto f = split_csv(rows[i]);
    REQUIRE(f.size() == 6);
    CHECK(std::stoi(f[0]) == cfg.n_grid[i - 1]);
    CHECK(f[1] == "2");
    const double lam = std::stod(f[2]);
    const double dof_v = std::stod(f[3]);
    const int m_req = std::stoi(f[4]);
    CHECK(f[5] == "1");
    CHECK(lam > 0.0);
    CHECK(dof_v > 0.0);
    CHECK(lam <= prev_lambda);
    CHECK(m_req >= prev_m);
    CHECK(m_req == required_width(dof_v, cfg.budget.delta));
    // two-layer balance: lambda tracks (d_x + 1) m / n
    CHECK(close_rel(lam, 4.0 * m_req / cfg.n_grid[i - 1], 0.05));
    prev_lambda = lam;
    prev_m = m_req;
    lambdas.push_back(lam);
    ms.push_back(m_req);
  }

  const json reports = json::parse(slurp(tmp.file("out/bounds.json")));
  REQUIRE(reports.is_array());
  REQUIRE(reports.size() == 3);
  for (size_t i = 0; i < reports.size(); ++i) {
    const json& r = reports[i];
    CHECK(r["n"] == cfg.n_grid[i]);
    CHECK(r["sigma"] == 0.5);
    CHECK(r["sigma_floored"] == false);
    const std::vector<int> widths = r["widths"].get<std::vector<int>>();
    REQUIRE(widths.size() == 3);
    CHECK(widths[0] == 3);
    CHECK(widths[1] == ms[i]);
    CHECK(widths[2] == 1);
    const std::vector<double> ls = r["lambdas"].get<std::vector<double>>();
    REQUIRE(ls.size() == 1);
    CHECK(close_rel(ls[0], lambdas[i], 1e-12));
    const double d1 = r["delta1"].get<double>();
    const double d2 = r["delta2"].get<double>();
    CHECK(d1 > 0.0);
    CHECK(d2 > 0.0);
    CHECK(close_rel(r["eps_n"].get<double>(), d1 + 0.5 * d2, 1e-12));
    CHECK(close_rel(r["eps_tilde_n"].get<double>(), d1 + d2, 1e-12));
    CHECK(r["erm_bound"].get<double>() > 0.0);
    CHECK(r["bayes_bound"].get<double>() > 0.0);
    CHECK(r["table_row"] == "general");
    CHECK(std::isfinite(r["table_value"].get<double>()));
    CHECK(r["r_hat_inf"].get<double>() > 0.0);
    CHECK(r["g_hat"].get<double>() > 0.0);
  }
}

TEST_CASE("compress writes a loadable model and an audited report") {
  TempDir tmp("cmd_compress");
  RunConfig cfg;
  cfg.command = "compress";
  cfg.teacher.kind = "kernel_two_layer";
  cfg.teacher.d_x = 2;
  cfg.teacher.m_ref = 48;
  cfg.teacher.seed = 11;
  cfg.has_teacher = true;
  cfg.widths = {160};
  cfg.n_fit = 512;
  cfg.n_eval = 512;
  cfg.out_dir = tmp.file("out1");
  const CommandOutcome out = run_command(cfg);
  REQUIRE(out.exit_code == 0);
  CHECK(out.errors.empty());

  const Network compressed = load_network(tmp.file("out1/compressed_model.json"));
  REQUIRE(compressed.layers.size() == 2);
  CHECK(compressed.layers[0].W.rows() == 160);
  CHECK(compressed.layers[0].W.cols() == 2);
  CHECK(compressed.layers[1].W.rows() == 1);

  const Network teacher = make_kernel_two_layer_teacher(2, 48, 11);
  const Matrix X = testsup::uniform_box(256, 2, 1.0, 123);
  const Vector gap = forward(compressed, X) - forward(teacher, X);
  CHECK(gap.array().square().mean() <= 0.05);

  const auto rows = csv_lines(tmp.file("out1/compress_report.csv"));
  REQUIRE(rows.size() == 3);
  CHECK(rows[0] ==
        "layer,lambda,m,err_emp,err_bound,prop_bound,w_fro2,w_cap,b_norm,b_cap,"
        "norm_ok");
  const auto r1 = split_csv(rows[1]);
  const auto r2 = split_csv(rows[2]);
  REQUIRE(r1.size() == 11);
  REQUIRE(r2.size() == 11);
  CHECK(r1[0] == "1");
  CHECK(std::stod(r1[3]) == 0.0);
  CHECK(std::stod(r1[4]) == 0.0);
  CHECK(r1[10] == "1");
  CHECK(r2[0] == "2");
  const double lam = std::stod(r2[1]);
  CHECK(lam > 0.0);
  CHECK(std::stoi(r2[2]) == 160);
  const double err_emp = std::stod(r2[3]);
  const double err_bound = std::stod(r2[4]);
  const double prop_bound = std::stod(r2[5]);
  CHECK(close_rel(prop_bound, 4.0 * lam, 1e-12));
  CHECK(close_rel(err_bound, 2.0 * std::sqrt(lam), 1e-9));
  CHECK(err_emp >= 0.0);
  CHECK(err_emp <= prop_bound);
  CHECK(std::stod(r2[6]) <= std::stod(r2[7]) * (1 + 1e-9));
  CHECK(std::stod(r2[8]) <= std::stod(r2[9]) * (1 + 1e-9));
  CHECK(r2[10] == "1");

  const json summary = json::parse(slurp(tmp.file("out1/compress_summary.json")));
  CHECK(summary["ok"] == true);
  CHECK(summary["errors"].empty());
  const double end_to_end = summary["end_to_end_sq"].get<double>();
  const double d1_pred = summary["delta1_pred"].get<double>();
  CHECK(end_to_end <= 0.05);
  CHECK(end_to_end <= std::max(d1_pred * d1_pred, 1e-8) * (1 + 1e-6));
  CHECK(close_rel(d1_pred, 2.0 * std::sqrt(lam), 1e-9));
  // depth 2: the end-to-end gap is exactly the top layer's empirical error
  CHECK(close_rel(end_to_end, err_emp, 1e-6));

  RunConfig cfg2 = cfg;
  cfg2.out_dir = tmp.file("out2");
  const CommandOutcome out2 = run_command(cfg2);
  REQUIRE(out2.exit_code == 0);
  CHECK(slurp(tmp.file("out2/compressed_model.json")) ==
        slurp(tmp.file("out1/compressed_model.json")));
  CHECK(slurp(tmp.file("out2/compress_report.csv")) ==
        slurp(tmp.file("out1/compress_report.csv")));
  CHECK(slurp(tmp.file("out2/compress_summary.json")) ==
        slurp(tmp.file("out1/compress_summary.json")));
}

TEST_CASE("experiment inject mode reproduces the configured slope") {
  TempDir tmp("cmd_inject");
  RunConfig cfg;
  cfg.command = "experiment";
  cfg.inject = true;
  cfg.inject_c = 2.5;
  cfg.inject_exponent = -0.8;
  cfg.n_grid = {64, 128, 256, 512, 1024};
  cfg.out_dir = tmp.file("out1");
  const CommandOutcome out = run_command(cfg);
  REQUIRE(out.exit_code == 0);
  CHECK(out.errors.empty());

  const auto rows = csv_lines(tmp.file("out1/cells.csv"));
  REQUIRE(rows.size() == 6);
  CHECK(rows[0] == "estimator,teacher,n,seed,mse,stderr");
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto f = split_csv(rows[i]);
    REQUIRE(f.size() == 6);
    CHECK(f[0] == "injected");
    CHECK(f[1] == "injected");
    const int n = std::stoi(f[2]);
    CHECK(n == cfg.n_grid[i - 1]);
    CHECK(f[3] == "0");
    CHECK(close_rel(std::stod(f[4]), 2.5 * std::pow(n, -0.8), 1e-15));
    CHECK(std::stod(f[5]) == 0.0);
  }

  const json fits = json::parse(slurp(tmp.file("out1/ratefit.json")));
  REQUIRE(fits.is_array());
  REQUIRE(fits.size() == 1);
  const json& f = fits[0];
  CHECK(std::abs(f["slope"].get<double>() + 0.8) <= 1e-9);
  CHECK(f["slope_stderr"].get<double>() <= 1e-9);
  CHECK(f["target_exponent"] == -0.8);
  CHECK(f["n_grid"].get<std::vector<int>>() == cfg.n_grid);
  CHECK(f["mean_errors"].size() == 5);
  CHECK(f["dropped_first"] == false);

  RunConfig cfg2 = cfg;
  cfg2.out_dir = tmp.file("out2");
  run_command(cfg2);
  CHECK(slurp(tmp.file("out2/cells.csv")) == slurp(tmp.file("out1/cells.csv")));
  CHECK(slurp(tmp.file("out2/ratefit.json")) == slurp(tmp.file("out1/ratefit.json")));
}

TEST_CASE("experiment runs a small erm sweep end to end") {
  TempDir tmp("cmd_sweep");
  RunConfig cfg;
  cfg.command = "experiment";
  cfg.teacher.kind = "finite_dim";
  cfg.teacher.dims = {1, 2, 1};
  cfg.teacher.seed = 3;
  cfg.has_teacher = true;
  cfg.estimator = "erm";
  cfg.widths_rule = "fixed";
  cfg.widths = {1, 2, 1};
  cfg.n_grid = {16, 32, 64, 128, 256};
  cfg.seeds = 3;
  cfg.sigma = 0.2;
  cfg.n_test = 128;
  cfg.erm_epochs = 60;
  cfg.erm_restarts = 1;
  cfg.master_seed = 5;
  cfg.out_dir = tmp.file("out");
  const CommandOutcome out = run_command(cfg);
  REQUIRE(out.exit_code == 0);
  CHECK(out.errors.empty());

  const auto rows = csv_lines(tmp.file("out/cells.csv"));
  REQUIRE(rows.size() == 16);
  for (size_t i = 1; i < rows.size(); ++i) {
    const auto f = split_csv(rows[i]);
    REQUIRE(f.size() == 6);
    CHECK(f[0] == "erm");
    CHECK(f[1] == "finite_dim");
    CHECK(std::stoi(f[2]) == cfg.n_grid[(i - 1) / 3]);
    CHECK(std::stoi(f[3]) == static_cast<int>((i - 1) % 3));
    const double mse = std::stod(f[4]);
    CHECK(std::isfinite(mse));
    CHECK(mse >= 0.0);
  }

  const json fits = json::parse(slurp(tmp.file("out/ratefit.json")));
  REQUIRE(fits.size() == 1);
  CHECK(fits[0]["estimator"] == "erm");
  CHECK(fits[0]["teacher"] == "finite_dim");
  CHECK(fits[0]["target_exponent"] == -1.0);
  CHECK(std::isfinite(fits[0]["slope"].get<double>()));
  CHECK(fits[0]["mean_errors"].size() == 5);
}

TEST_CASE("failures surface as nonzero exits and an error manifest") {
  RunConfig bad;
  bad.command = "frobnicate";
  const CommandOutcome unknown = run_command(bad);
  CHECK(unknown.exit_code == 1);
  REQUIRE(!unknown.errors.empty());
  CHECK(unknown.errors[0].find("unknown command") != std::string::npos);

  TempDir tmp("cmd_fail");
  RunConfig missing;
  missing.command = "analyze";
  missing.model_path = tmp.file("nope.json");
  missing.out_dir = tmp.file("err_a");
  const CommandOutcome m = run_command(missing);
  CHECK(m.exit_code == 1);
  CHECK(!m.errors.empty());
  const json errs = json::parse(slurp(tmp.file("err_a/errors.json")));
  CHECK(errs["errors"].size() >= 1);

  RunConfig no_teacher;
  no_teacher.command = "plan";
  no_teacher.out_dir = tmp.file("err_b");
  const CommandOutcome nt = run_command(no_teacher);
  CHECK(nt.exit_code == 1);
  REQUIRE(!nt.errors.empty());
  CHECK(nt.errors[0].find("model") != std::string::npos);

  RunConfig no_plan;
  no_plan.command = "compress";
  no_plan.teacher.kind = "finite_dim";
  no_plan.teacher.dims = {1, 2, 1};
  no_plan.has_teacher = true;
  no_plan.out_dir = tmp.file("err_c");
  const CommandOutcome np = run_command(no_plan);
  CHECK(np.exit_code == 1);
  REQUIRE(!np.errors.empty());
  CHECK(np.errors[0].find("lambdas or widths") != std::string::npos);
}
