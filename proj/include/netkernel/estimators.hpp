#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "netkernel/network.hpp"
#include "netkernel/rng.hpp"

namespace netkernel {

using Predictor = std::function<Vector(const Matrix&)>;

Predictor predictor_of(const Network& net);

// x_i i.i.d. uniform on [-D_x, D_x]^{d_x}, y_i = f(x_i) + sigma * xi_i with
// standard Gaussian xi. Deterministic in seed.
Dataset gen_data(const Network& teacher, int n, double sigma, double D_x,
                 uint64_t seed);

// Rescales each W by min(1, R_bar/||W||_F) and each b by min(1, R_bar_b/||b||).
// Idempotent; the identity on networks already inside the class.
Network project_to_class(const Network& net, const NormBudget& budget);

// Draws W uniformly from the Frobenius ball of radius R_bar and b uniformly
// from the l2 ball of radius R_bar_b, layer by layer. widths is the full chain
// (d_x, m_2, ..., m_L, 1).
Network sample_prior(const std::vector<int>& widths, const NormBudget& budget,
                     Activation activation, Rng& rng);

struct ErmConfig {
  double learning_rate = 1.0;  // initial step; backtracking halves it, accepted
                               // steps grow it by 1.2
  int epochs = 4000;
  int restarts = 5;
  int max_backtracks = 50;
  int stall_limit = 60;        // consecutive relative improvements below
  double stall_rtol = 1e-13;   // stall_rtol end the restart
  uint64_t seed = 0;
};

struct ErmResult {
  Network net;
  double train_mse = 0.0;
  int best_restart = -1;
  int diverged_restarts = 0;
};

// Projected full-batch gradient descent on mean squared loss over the class:
// projection after every step, backtracking on loss increase (loss is
// nonincreasing along accepted steps), best of cfg.restarts random
// initializations. Throws std::runtime_error if every restart diverges.
ErmResult erm_fit(const Dataset& data, const std::vector<int>& widths,
                  const NormBudget& budget, const ErmConfig& cfg,
                  Activation activation = Activation::kRelu);

struct BayesConfig {
  double proposal_std = 0.05;  // initial; adapted toward 25% acceptance during
                               // burn-in, then frozen
  int chain_length = 20000;
  int burn_in = 5000;
  int thinning = 20;
  double sigma = 0.1;  // likelihood noise level
  uint64_t seed = 0;
};

struct BayesResult {
  std::shared_ptr<std::vector<Network>> samples;  // thinned, post burn-in
  Predictor mean_predictor;  // pointwise average over the thinned samples
  double acceptance_rate = 0.0;  // over the frozen phase
  double proposal_std_final = 0.0;
  bool flagged = false;  // acceptance below 1% or above 99%
};

// Random-walk Metropolis on the concatenated parameter vector. The prior is
// uniform on the product of per-layer norm balls; proposals leaving any ball
// are rejected outright, so every sample satisfies the class constraints
// exactly. n = 0 data reduces the chain to prior sampling.
BayesResult bayes_fit(const Dataset& data, const std::vector<int>& widths,
                      const NormBudget& budget, const BayesConfig& cfg,
                      Activation activation = Activation::kRelu);

struct L2Error {
  double value = 0.0;    // mean squared gap on fresh uniform draws
  double stderr_ = 0.0;  // Monte Carlo standard error of that mean
};

L2Error l2_error(const Predictor& f_hat, const Network& teacher, int n_test,
                 double D_x, uint64_t seed);

// Fraction of posterior samples whose L2(P_hat) distance to the teacher is
// >= radius, measured on a shared set of n_test fresh uniform draws.
double contraction_mass(const std::vector<Network>& samples, const Network& teacher,
                        double radius, int n_test, double D_x, uint64_t seed);

enum class EstimatorKind { kErm, kBayes };
enum class WidthsRule { kFixed, kBalanced };

struct SweepCell {
  int n = 0;
  int seed_index = 0;
  double mse = 0.0;
  double stderr_ = 0.0;
  std::vector<int> widths;  // full chain used for this cell
};

struct RateFit {
  std::vector<int> n_grid;
  std::vector<double> mean_errors;  // per n, averaged over seeds
  double slope = 0.0;
  double slope_stderr = 0.0;
  bool dropped_first = false;  // smallest-n point saturated at the null level
  std::vector<SweepCell> cells;
};

struct SweepConfig {
  std::vector<int> n_grid;  // strictly increasing, >= 5 points
  int seeds = 5;
  EstimatorKind estimator = EstimatorKind::kErm;
  WidthsRule widths_rule = WidthsRule::kBalanced;
  std::vector<int> fixed_widths;  // full chain, kFixed only
  double sigma = -1.0;       // < 0: sigma_mult * (teacher output std on a probe)
  double sigma_mult = 1.0;
  double D_x = 1.0;
  int n_test = 4096;
  uint64_t master_seed = 0;
  ErmConfig erm;
  BayesConfig bayes;
  int workers = 0;  // 0: NETKERNEL_WORKERS env var, else hardware concurrency
};

// For each (n, seed) cell: generate data, pick widths (fixed, or re-balanced
// per n from the teacher's layer spectra), fit, and measure l2_error against
// the teacher. Cells run concurrently on independent RNG streams derived from
// (master_seed, n, seed); the reduction order is deterministic. The slope is
// the least-squares fit of log(mean error) against log(n), after dropping the
// smallest n if its error saturates at the null-predictor level.
RateFit rate_sweep(const Network& teacher, const SweepConfig& cfg);

// The line-fit primitive alone (no drop rule); exposed for injected error
// sequences.
RateFit fit_rate(const std::vector<int>& n_grid,
                 const std::vector<double>& mean_errors);

}  // namespace netkernel
