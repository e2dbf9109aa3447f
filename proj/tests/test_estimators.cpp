#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "netkernel/estimators.hpp"
#include "netkernel/network.hpp"
#include "netkernel/rng.hpp"
#include "test_support.hpp"

using namespace netkernel;
using testsup::close_rel;
using testsup::same_network;
using testsup::uniform_box;

namespace {

// relu teacher with two hidden units, well inside the default class
Network tiny_teacher() {
  Network net;
  net.activation = Activation::kRelu;
  Layer l1;
  l1.W = Matrix(2, 1);
  l1.W << 0.8, -0.6;
  l1.b = Vector(2);
  l1.b << 0.1, 0.2;
  Layer l2;
  l2.W = Matrix(1, 2);
  l2.W << 0.5, 0.4;
  l2.b = Vector(1);
  l2.b << 0.0;
  net.layers = {l1, l2};
  return net;
}

// depth-1 scalar net f(x) = w x + b; no hidden layer, so no activation
Network affine_teacher(double w, double b) {
  Network net;
  net.activation = Activation::kRelu;
  Layer l;
  l.W = Matrix(1, 1);
  l.W << w;
  l.b = Vector(1);
  l.b << b;
  net.layers = {l};
  return net;
}

Network zero_teacher() { return affine_teacher(0.0, 0.0); }

double layer_w_norm(const Network& net, size_t l) { return net.layers[l].W.norm(); }

}  // namespace

TEST_CASE("gen_data is deterministic, bounded, and exact at sigma zero") {
  const Network teacher = tiny_teacher();
  const Dataset d1 = gen_data(teacher, 20, 0.0, 0.7, 5);
  REQUIRE(d1.X.rows() == 20);
  REQUIRE(d1.X.cols() == 1);
  REQUIRE(d1.y.size() == 20);
  CHECK(d1.noise_sigma == 0.0);
  CHECK(d1.X.cwiseAbs().maxCoeff() <= 0.7);
  const Vector f = forward(teacher, d1.X);
  for (int i = 0; i < 20; ++i) CHECK(d1.y[i] == f[i]);

  const Dataset d2 = gen_data(teacher, 20, 0.0, 0.7, 5);
  CHECK(d1.X == d2.X);
  CHECK(d1.y == d2.y);
  const Dataset d3 = gen_data(teacher, 20, 0.0, 0.7, 6);
  CHECK(d1.X != d3.X);
}

TEST_CASE("gen_data noise matches the requested variance") {
  const Network teacher = zero_teacher();
  const int n = 20000;
  const Dataset d = gen_data(teacher, n, 0.5, 1.0, 17);
  CHECK(d.noise_sigma == 0.5);
  const double mean = d.y.mean();
  const double var = (d.y.array() - mean).square().sum() / (n - 1);
  CHECK(std::abs(mean) <= 0.02);
  CHECK(std::abs(var / 0.25 - 1.0) <= 0.05);
}

TEST_CASE("gen_data rejects bad arguments") {
  const Network teacher = tiny_teacher();
  CHECK_THROWS_AS(gen_data(teacher, -1, 0.1, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(gen_data(teacher, 10, -0.1, 1.0, 0), std::invalid_argument);
  CHECK_THROWS_AS(gen_data(teacher, 10, 0.1, 0.0, 0), std::invalid_argument);
}

TEST_CASE("project_to_class rescales onto the caps and fixes interior nets") {
  const NormBudget budget;
  const double rw = budget.R_bar();
  const double rb = budget.R_bar_b();

  Network big = tiny_teacher();
  big.layers[0].W *= 40.0;
  big.layers[0].b *= 40.0;
  const Network proj = project_to_class(big, budget);
  CHECK(close_rel(proj.layers[0].W.norm(), rw, 1e-12));
  CHECK(close_rel(proj.layers[0].b.norm(), rb, 1e-12));
  // direction preserved
  const double scale = big.layers[0].W.norm() / rw;
  CHECK((proj.layers[0].W * scale - big.layers[0].W).cwiseAbs().maxCoeff() <= 1e-10);
  // untouched layer is bit-identical
  CHECK(proj.layers[1].W == big.layers[1].W);

  const Network inside = tiny_teacher();
  CHECK(same_network(project_to_class(inside, budget), inside));

  const Network twice = project_to_class(proj, budget);
  for (size_t l = 0; l < proj.layers.size(); ++l) {
    CHECK((twice.layers[l].W - proj.layers[l].W).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((twice.layers[l].b - proj.layers[l].b).cwiseAbs().maxCoeff() <= 1e-14);
  }

  NormBudget bad;
  bad.delta = 0.6;
  CHECK_THROWS_AS(project_to_class(big, bad), std::invalid_argument);
}

TEST_CASE("sample_prior stays inside the class and is deterministic") {
  const NormBudget budget;
  const std::vector<int> widths = {2, 3, 1};
  Rng rng(42);
  for (int t = 0; t < 200; ++t) {
    const Network net = sample_prior(widths, budget, Activation::kRelu, rng);
    REQUIRE(net.layers.size() == 2);
    for (const Layer& l : net.layers) {
      CHECK(l.W.norm() <= budget.R_bar() * (1 + 1e-12));
      CHECK(l.b.norm() <= budget.R_bar_b() * (1 + 1e-12));
    }
  }
  Rng ra(42), rb(42);
  const Network na = sample_prior(widths, budget, Activation::kRelu, ra);
  const Network nb = sample_prior(widths, budget, Activation::kRelu, rb);
  CHECK(same_network(na, nb));

  Rng rc(43);
  CHECK_THROWS_AS(sample_prior({1}, budget, Activation::kRelu, rc),
                  std::invalid_argument);
  CHECK_THROWS_AS(sample_prior({2, 3, 2}, budget, Activation::kRelu, rc),
                  std::invalid_argument);
}

TEST_CASE("sample_prior weight norms follow the uniform-ball law") {
  // ||W|| for a uniform draw from the radius-r ball in dimension D has mean
  // r D / (D + 1); layer 1 of {2,3,1} has D = 6
  const NormBudget budget;
  Rng rng(7);
  double acc = 0.0;
  const int trials = 4000;
  for (int t = 0; t < trials; ++t)
    acc += layer_w_norm(sample_prior({2, 3, 1}, budget, Activation::kRelu, rng), 0);
  const double mean = acc / trials;
  const double expect = budget.R_bar() * 6.0 / 7.0;
  CHECK(std::abs(mean - expect) <= 0.03 * expect);
}

TEST_CASE("erm_fit drives a zero-target problem to zero loss") {
  Dataset data;
  data.X = uniform_box(40, 1, 1.0, 31);
  data.y = Vector::Zero(40);
  ErmConfig cfg;
  cfg.epochs = 1500;
  cfg.restarts = 3;
  cfg.seed = 11;
  const ErmResult res = erm_fit(data, {1, 2, 1}, NormBudget{}, cfg);
  CHECK(res.train_mse <= 1e-6);
  CHECK(res.best_restart >= 0);
  CHECK(res.diverged_restarts == 0);
  validate(res.net);
}

TEST_CASE("erm_fit recovers a realizable teacher to small training loss") {
  const Network teacher = tiny_teacher();
  const Dataset data = gen_data(teacher, 48, 0.0, 1.0, 23);
  ErmConfig cfg;
  cfg.seed = 5;
  const ErmResult res = erm_fit(data, {1, 8, 1}, NormBudget{}, cfg);
  const double null_mse = data.y.array().square().mean();
  CHECK(res.train_mse <= 2e-3);
  CHECK(res.train_mse < 0.05 * null_mse);
}

TEST_CASE("erm_fit respects a binding norm budget") {
  NormBudget tight;
  tight.R = 0.05;
  Dataset data;
  data.X = uniform_box(32, 1, 1.0, 13);
  data.y = 3.0 * data.X.col(0);
  ErmConfig cfg;
  cfg.epochs = 800;
  cfg.restarts = 2;
  cfg.seed = 3;
  const ErmResult res = erm_fit(data, {1, 4, 1}, tight, cfg);
  for (const Layer& l : res.net.layers) {
    CHECK(l.W.norm() <= tight.R_bar() * (1 + 1e-12));
    CHECK(l.b.norm() <= tight.R_bar_b() * (1 + 1e-12));
  }
  CHECK(std::isfinite(res.train_mse));
}

TEST_CASE("erm_fit is deterministic in its seed") {
  const Network teacher = tiny_teacher();
  const Dataset data = gen_data(teacher, 24, 0.1, 1.0, 29);
  ErmConfig cfg;
  cfg.epochs = 400;
  cfg.restarts = 2;
  cfg.seed = 101;
  const ErmResult a = erm_fit(data, {1, 4, 1}, NormBudget{}, cfg);
  const ErmResult b = erm_fit(data, {1, 4, 1}, NormBudget{}, cfg);
  CHECK(same_network(a.net, b.net));
  CHECK(a.train_mse == b.train_mse);
  CHECK(a.best_restart == b.best_restart);
  cfg.seed = 102;
  const ErmResult c = erm_fit(data, {1, 4, 1}, NormBudget{}, cfg);
  CHECK(!same_network(a.net, c.net));
}

TEST_CASE("teacher reparameterization leaves the erm fit unchanged") {
  // moving scale between teacher layers keeps the generated data bit-identical,
  // so the fitted predictor is too
  const Network teacher = tiny_teacher();
  const Network moved = reparameterize(teacher, 1, 3.7);
  const Dataset d0 = gen_data(teacher, 32, 0.1, 1.0, 99);
  const Dataset d1 = gen_data(moved, 32, 0.1, 1.0, 99);
  REQUIRE(d0.X == d1.X);
  REQUIRE(d0.y == d1.y);

  ErmConfig cfg;
  cfg.epochs = 200;
  cfg.restarts = 1;
  cfg.seed = 17;
  const ErmResult f0 = erm_fit(d0, {1, 4, 1}, NormBudget{}, cfg);
  const ErmResult f1 = erm_fit(d1, {1, 4, 1}, NormBudget{}, cfg);
  CHECK(same_network(f0.net, f1.net));
  const Matrix X = uniform_box(16, 1, 1.0, 5);
  CHECK(forward(f0.net, X) == forward(f1.net, X));
}

TEST_CASE("erm_fit rejects bad configurations") {
  const Dataset data = gen_data(tiny_teacher(), 16, 0.0, 1.0, 1);
  ErmConfig cfg;
  cfg.epochs = 0;
  CHECK_THROWS_AS(erm_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.epochs = 10;
  cfg.restarts = 0;
  CHECK_THROWS_AS(erm_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.restarts = 1;
  CHECK_THROWS_AS(erm_fit(data, {2, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  CHECK_THROWS_AS(erm_fit(data, {1}, NormBudget{}, cfg), std::invalid_argument);
  Dataset empty;
  empty.X = Matrix(0, 1);
  empty.y = Vector(0);
  CHECK_THROWS_AS(erm_fit(empty, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
}

TEST_CASE("bayes_fit with no data samples the prior") {
  const NormBudget budget;
  Dataset empty;
  empty.X = Matrix(0, 1);
  empty.y = Vector(0);
  BayesConfig cfg;
  cfg.chain_length = 40000;
  cfg.burn_in = 4000;
  cfg.thinning = 10;
  cfg.sigma = 0.3;
  cfg.seed = 19;
  const BayesResult res = bayes_fit(empty, {1, 2, 1}, budget, cfg);
  REQUIRE(res.samples);
  REQUIRE(res.samples->size() == 3600);
  double acc = 0.0;
  for (const Network& net : *res.samples) {
    acc += net.layers[0].W.norm();
    for (const Layer& l : net.layers) {
      CHECK(l.W.norm() <= budget.R_bar() * (1 + 1e-12));
      CHECK(l.b.norm() <= budget.R_bar_b() * (1 + 1e-12));
    }
  }
  // uniform-ball mean norm in dimension 2 is R_bar * 2/3
  const double mean = acc / static_cast<double>(res.samples->size());
  const double expect = budget.R_bar() * 2.0 / 3.0;
  CHECK(std::abs(mean - expect) <= 0.15 * budget.R_bar());
  CHECK(res.acceptance_rate > 0.02);
  CHECK(res.acceptance_rate < 0.9);
  CHECK(!res.flagged);

  // mean_predictor is the pointwise average of the sample forwards
  const Matrix X5 = uniform_box(5, 1, 1.0, 99);
  Vector manual = Vector::Zero(5);
  for (const Network& net : *res.samples) manual += forward(net, X5);
  manual /= static_cast<double>(res.samples->size());
  const Vector pred = res.mean_predictor(X5);
  for (int i = 0; i < 5; ++i) CHECK(close_rel(pred[i], manual[i], 1e-12));
}

TEST_CASE("bayes_fit posterior matches the integrated truth on a scalar toy") {
  // depth-1 model f(x) = W x + b: the posterior over (W, b) is the Gaussian
  // likelihood restricted to the prior box, so the W marginal has a closed
  // integral form we can evaluate by quadrature
  const NormBudget budget;
  const double rw = budget.R_bar();
  const double rb = budget.R_bar_b();
  const double sigma = 0.3;
  const Network teacher = affine_teacher(0.5, 0.0);
  const Dataset data = gen_data(teacher, 30, sigma, 1.0, 424242);
  const double dn = static_cast<double>(data.y.size());

  BayesConfig cfg;
  cfg.chain_length = 256000;
  cfg.burn_in = 16000;
  cfg.thinning = 30;
  cfg.sigma = sigma;
  cfg.seed = 77;
  const BayesResult res = bayes_fit(data, {1, 1}, budget, cfg);
  REQUIRE(res.samples);
  REQUIRE(res.samples->size() == 8000);
  CHECK(!res.flagged);
  CHECK(res.acceptance_rate > 0.02);
  CHECK(res.acceptance_rate < 0.9);

  // truth: g(W) = integral over b in [-rb, rb] of exp(-SSE(W, b) / (2 sigma^2)),
  // with SSE(W, b) = rs(W) + 2 b sr(W) + n b^2
  const int bins = 25;
  const int sub = 80;
  const int nw = bins * sub;
  const int nb = 4000;
  std::vector<double> rs(nw + 1), sr(nw + 1);
  double min_sse = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= nw; ++i) {
    const double W = -rw + 2.0 * rw * i / nw;
    const Vector r = W * data.X.col(0) - data.y;
    rs[static_cast<size_t>(i)] = r.squaredNorm();
    sr[static_cast<size_t>(i)] = r.sum();
    const double bstar = std::clamp(-sr[static_cast<size_t>(i)] / dn, -rb, rb);
    min_sse = std::min(min_sse, rs[static_cast<size_t>(i)] +
                                    2.0 * bstar * sr[static_cast<size_t>(i)] +
                                    dn * bstar * bstar);
  }
  const double inv2s2 = 0.5 / (sigma * sigma);
  std::vector<double> g(nw + 1);
  for (int i = 0; i <= nw; ++i) {
    double accb = 0.0;
    for (int k = 0; k <= nb; ++k) {
      const double b = -rb + 2.0 * rb * k / nb;
      const double sse =
          rs[static_cast<size_t>(i)] + 2.0 * b * sr[static_cast<size_t>(i)] + dn * b * b;
      const double v = std::exp(-(sse - min_sse) * inv2s2);
      accb += (k == 0 || k == nb) ? 0.5 * v : v;
    }
    g[static_cast<size_t>(i)] = accb;
  }
  std::vector<double> expected(bins, 0.0);
  double total = 0.0;
  for (int k = 0; k < bins; ++k) {
    for (int i = k * sub; i < (k + 1) * sub; ++i)
      expected[static_cast<size_t>(k)] +=
          0.5 * (g[static_cast<size_t>(i)] + g[static_cast<size_t>(i + 1)]);
    total += expected[static_cast<size_t>(k)];
  }
  for (double& e : expected) e /= total;

  std::vector<double> emp(bins, 0.0);
  double mean_w = 0.0;
  for (const Network& net : *res.samples) {
    const double W = net.layers[0].W(0, 0);
    CHECK(std::abs(W) <= rw * (1 + 1e-12));
    CHECK(std::abs(net.layers[0].b(0)) <= rb * (1 + 1e-12));
    mean_w += W;
    int idx = static_cast<int>(std::floor((W + rw) / (2.0 * rw) * bins));
    idx = std::clamp(idx, 0, bins - 1);
    emp[static_cast<size_t>(idx)] += 1.0;
  }
  mean_w /= static_cast<double>(res.samples->size());
  for (double& e : emp) e /= static_cast<double>(res.samples->size());

  double tv = 0.0;
  for (int k = 0; k < bins; ++k)
    tv += std::abs(emp[static_cast<size_t>(k)] - expected[static_cast<size_t>(k)]);
  tv *= 0.5;
  CAPTURE(tv);
  CAPTURE(mean_w);
  CHECK(tv <= 0.06);
  CHECK(std::abs(mean_w - 0.5) <= 0.25);
}

TEST_CASE("bayes_fit is deterministic in its seed") {
  const Dataset data = gen_data(tiny_teacher(), 16, 0.1, 1.0, 3);
  BayesConfig cfg;
  cfg.chain_length = 3000;
  cfg.burn_in = 500;
  cfg.thinning = 10;
  cfg.sigma = 0.2;
  cfg.seed = 55;
  const BayesResult a = bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg);
  const BayesResult b = bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg);
  REQUIRE(a.samples->size() == b.samples->size());
  CHECK(same_network(a.samples->front(), b.samples->front()));
  CHECK(same_network(a.samples->back(), b.samples->back()));
  CHECK(a.acceptance_rate == b.acceptance_rate);
  cfg.seed = 56;
  const BayesResult c = bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg);
  CHECK(!same_network(a.samples->front(), c.samples->front()));
}

TEST_CASE("bayes_fit flags a chain that cannot move") {
  const Dataset data = gen_data(tiny_teacher(), 8, 0.1, 1.0, 3);
  BayesConfig cfg;
  cfg.chain_length = 2000;
  cfg.burn_in = 0;
  cfg.thinning = 10;
  cfg.sigma = 0.2;
  cfg.proposal_std = 1e6;
  cfg.seed = 9;
  const BayesResult res = bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg);
  CHECK(res.acceptance_rate == 0.0);
  CHECK(res.flagged);
  CHECK(res.proposal_std_final == 1e6);
  REQUIRE(res.samples->size() == 200);
  CHECK(same_network(res.samples->front(), res.samples->back()));
}

TEST_CASE("bayes_fit rejects bad configurations") {
  const Dataset data = gen_data(tiny_teacher(), 8, 0.1, 1.0, 3);
  BayesConfig cfg;
  cfg.sigma = 0.0;
  CHECK_THROWS_AS(bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.sigma = 0.1;
  cfg.chain_length = 100;
  cfg.burn_in = 100;
  CHECK_THROWS_AS(bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.burn_in = 10;
  cfg.thinning = 0;
  CHECK_THROWS_AS(bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.thinning = 5;
  cfg.proposal_std = 0.0;
  CHECK_THROWS_AS(bayes_fit(data, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  cfg.proposal_std = 0.05;
  CHECK_THROWS_AS(bayes_fit(data, {2, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
  Dataset broken;
  broken.X = Matrix(3, 1);
  broken.X.setZero();
  broken.y = Vector(2);
  broken.y.setZero();
  CHECK_THROWS_AS(bayes_fit(broken, {1, 2, 1}, NormBudget{}, cfg), std::invalid_argument);
}

TEST_CASE("l2_error is zero on itself and exact for a constant offset") {
  const Network teacher = tiny_teacher();
  const L2Error self = l2_error(predictor_of(teacher), teacher, 256, 1.0, 9);
  CHECK(self.value == 0.0);
  CHECK(self.stderr_ == 0.0);

  const Predictor shifted = [&teacher](const Matrix& X) {
    return Vector(forward(teacher, X).array() + 0.3);
  };
  const L2Error off = l2_error(shifted, teacher, 512, 1.0, 9);
  CHECK(close_rel(off.value, 0.09, 1e-9));
  CHECK(off.stderr_ <= 1e-12);

  CHECK_THROWS_AS(l2_error(predictor_of(teacher), teacher, 0, 1.0, 9),
                  std::invalid_argument);
}

TEST_CASE("l2_error estimates agree across seeds within Monte Carlo error") {
  const Network teacher = tiny_teacher();
  const Network other = testsup::random_net({1, 3, 1}, 0.4, 21);
  const L2Error e1 = l2_error(predictor_of(other), teacher, 4096, 1.0, 101);
  const L2Error e2 = l2_error(predictor_of(other), teacher, 4096, 1.0, 202);
  CHECK(e1.stderr_ > 0.0);
  CHECK(std::abs(e1.value - e2.value) <= 6.0 * (e1.stderr_ + e2.stderr_) + 1e-12);
}

TEST_CASE("contraction_mass counts samples outside the radius") {
  const Network teacher = tiny_teacher();
  CHECK(contraction_mass({teacher}, teacher, 1e-9, 128, 1.0, 4) == 0.0);

  Network far = tiny_teacher();
  far.layers[1].b(0) += 5.0;
  CHECK(contraction_mass({far}, teacher, 1.0, 128, 1.0, 4) == 1.0);

  Rng rng(31);
  std::vector<Network> samples;
  for (int t = 0; t < 50; ++t)
    samples.push_back(sample_prior({1, 2, 1}, NormBudget{}, Activation::kRelu, rng));
  const double m_small = contraction_mass(samples, teacher, 0.1, 256, 1.0, 8);
  const double m_mid = contraction_mass(samples, teacher, 0.5, 256, 1.0, 8);
  const double m_big = contraction_mass(samples, teacher, 2.0, 256, 1.0, 8);
  CHECK(m_small >= m_mid);
  CHECK(m_mid >= m_big);

  CHECK_THROWS_AS(contraction_mass({}, teacher, 0.1, 128, 1.0, 4),
                  std::invalid_argument);
  CHECK_THROWS_AS(contraction_mass({teacher}, teacher, 0.1, 0, 1.0, 4),
                  std::invalid_argument);
}

TEST_CASE("fit_rate recovers exact power laws") {
  const std::vector<int> n = {10, 100, 1000, 10000};
  std::vector<double> errs;
  for (int v : n) errs.push_back(3.7 / static_cast<double>(v));
  const RateFit f1 = fit_rate(n, errs);
  CHECK(std::abs(f1.slope + 1.0) <= 1e-12);
  CHECK(f1.slope_stderr <= 1e-6);
  CHECK(f1.n_grid == n);

  errs.clear();
  for (int v : n) errs.push_back(0.9 * std::pow(static_cast<double>(v), -2.0 / 3.0));
  const RateFit f2 = fit_rate(n, errs);
  CHECK(std::abs(f2.slope + 2.0 / 3.0) <= 1e-9);

  const RateFit f3 = fit_rate({16, 64}, {1.0, 0.25});
  CHECK(std::abs(f3.slope + 1.0) <= 1e-12);
  CHECK(f3.slope_stderr == 0.0);
}

TEST_CASE("fit_rate rejects malformed inputs") {
  CHECK_THROWS_AS(fit_rate({10, 100}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(fit_rate({10}, {1.0}), std::invalid_argument);
  CHECK_THROWS_AS(fit_rate({100, 100}, {1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(fit_rate({1, 10}, {1.0, 0.5}), std::invalid_argument);
  CHECK_THROWS_AS(fit_rate({10, 100}, {1.0, 0.0}), std::invalid_argument);
}

TEST_CASE("rate_sweep fills every cell deterministically") {
  const Network teacher = make_finite_dim_teacher({1, 2, 1}, 3);
  SweepConfig cfg;
  cfg.n_grid = {32, 64, 128, 256, 512};
  cfg.seeds = 3;
  cfg.estimator = EstimatorKind::kErm;
  cfg.widths_rule = WidthsRule::kFixed;
  cfg.fixed_widths = {1, 2, 1};
  cfg.sigma = 0.25;
  cfg.n_test = 512;
  cfg.master_seed = 7;
  cfg.erm.epochs = 300;
  cfg.erm.restarts = 2;
  const RateFit fit = rate_sweep(teacher, cfg);

  REQUIRE(fit.cells.size() == 15);
  for (size_t i = 0; i < fit.cells.size(); ++i) {
    const SweepCell& cell = fit.cells[i];
    CHECK(cell.n == cfg.n_grid[i / 3]);
    CHECK(cell.seed_index == static_cast<int>(i % 3));
    CHECK(cell.widths == cfg.fixed_widths);
    CHECK(std::isfinite(cell.mse));
    CHECK(cell.mse >= 0.0);
    CHECK(cell.stderr_ >= 0.0);
  }
  REQUIRE(fit.mean_errors.size() == 5);
  for (int i = 0; i < 5; ++i) {
    double acc = 0.0;
    for (int s = 0; s < 3; ++s) acc += fit.cells[static_cast<size_t>(3 * i + s)].mse;
    CHECK(close_rel(fit.mean_errors[static_cast<size_t>(i)], acc / 3.0, 1e-12));
  }
  CHECK(std::isfinite(fit.slope));
  CHECK(fit.slope < 0.05);
  CHECK(fit.slope > -2.5);
  WARN(!fit.dropped_first);

  const RateFit again = rate_sweep(teacher, cfg);
  CHECK(again.slope == fit.slope);
  CHECK(again.mean_errors == fit.mean_errors);
  for (size_t i = 0; i < fit.cells.size(); ++i)
    CHECK(again.cells[i].mse == fit.cells[i].mse);
}

TEST_CASE("rate_sweep validates its configuration") {
  const Network teacher = make_finite_dim_teacher({1, 2, 1}, 3);
  SweepConfig cfg;
  cfg.n_grid = {32, 64, 128, 256};
  cfg.seeds = 3;
  CHECK_THROWS_AS(rate_sweep(teacher, cfg), std::invalid_argument);
  cfg.n_grid = {32, 64, 128, 256, 512};
  cfg.seeds = 2;
  CHECK_THROWS_AS(rate_sweep(teacher, cfg), std::invalid_argument);
  cfg.seeds = 3;
  cfg.n_grid = {32, 64, 64, 256, 512};
  CHECK_THROWS_AS(rate_sweep(teacher, cfg), std::invalid_argument);
  cfg.n_grid = {32, 64, 128, 256, 512};
  cfg.widths_rule = WidthsRule::kFixed;
  cfg.fixed_widths = {};
  CHECK_THROWS_AS(rate_sweep(teacher, cfg), std::invalid_argument);
}
