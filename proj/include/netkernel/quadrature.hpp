#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "netkernel/network.hpp"
#include "netkernel/spectral.hpp"

namespace netkernel {

struct NodeSample {
  std::vector<int> ids;       // node indices drawn i.i.d. from q, with replacement
  Vector w;                   // importance weights w_j = (q_{id_j} m_source)^{-1/2}
  double weight_mass = 0.0;   // (1/m) sum_j w_j^2; expectation is 1 for any q
  int attempts = 0;
  bool ok = false;            // weight_mass <= (1 - 2 delta)^{-1} achieved
};

// Draws m nodes from the distribution q (over the source layer's nodes),
// resampling up to max_attempts times until the weight mass passes the
// (1 - 2 delta)^{-1} cap. On exhaustion, returns the last draw with
// ok = false and the achieved mass.
NodeSample sample_nodes(const Vector& q, int m, uint64_t seed, double delta,
                        int max_attempts = 32);

struct BetaFit {
  Matrix beta;        // one coefficient row per target column: targets x design
  Vector sq_norm;     // ||beta_row||^2 per target
  Vector multiplier;  // ridge level used per target (0 when unconstrained)
  double ridge_floor = 0.0;
  double max_col_mse = 0.0;  // worst per-target mean squared residual on the fit data
};

// Per-row norm-constrained least squares: for each column t of targets,
// minimize ||design beta - t||^2 subject to ||beta||^2 <= cap. Solved on the
// eigenbasis of design^T design with a bisection on the ridge multiplier;
// a 1e-12 * trace ridge floor covers rank deficiency. The constraint is met
// within 1e-8 relative.
BetaFit solve_beta(const Matrix& targets, const Matrix& design, double cap);

struct LayerPlan {
  int layer = 0;  // ell in 2..L: nodes live on teacher layer ell's input side
  double lambda = 0.0;
  int m = 0;
  double dof_value = 0.0;
  std::vector<int> node_ids;
  Vector w;
  double weight_mass = 0.0;
  int attempts = 0;
  bool ok = false;
  bool degenerate_q = false;
  bool width_floored = false;   // required_width hit the m = 1 floor
  bool lambda_floored = false;  // width inversion hit the lambda floor
};

struct CompressionPlan {
  double delta = 0.1;           // caller-facing confidence
  double sampling_delta = 0.05; // delta / 2: the construction applies the
                                // quadrature step at half the budget, which is
                                // what keeps the audited norms inside
                                // c_hat * R^2 = 4 R^2 / (1 - delta)
  std::map<int, LayerPlan> layers;  // keys 2..L
};

// Plan from per-layer regularization levels lambda_2..lambda_L: widths via
// required_width(N_hat(lambda), delta), nodes via leverage-score sampling.
CompressionPlan plan_compression(const Network& teacher, const Matrix& X,
                                 const std::vector<double>& lambdas, double delta,
                                 uint64_t seed);

// Plan from explicit widths m_2..m_L: per layer, the lambda whose required
// width matches m is recovered by bisection, then sampling proceeds as above.
CompressionPlan plan_compression_widths(const Network& teacher, const Matrix& X,
                                        const std::vector<int>& widths, double delta,
                                        uint64_t seed);

// Identity plan: every teacher node once, unit weights. Compressing with it
// reproduces the teacher's outputs exactly (up to roundoff).
CompressionPlan identity_plan(const Network& teacher);

struct LayerCompressionReport {
  int layer = 0;
  double lambda = 0.0;
  int m = 0;
  double err_emp = 0.0;    // worst per-target empirical squared error, eval set
  double err_bound = 0.0;  // this layer's term of the delta1 telescope
  double prop_bound = 0.0; // 4 lambda R^2, the per-layer quadrature guarantee
  double err_fit = 0.0;    // same as err_emp but on the fit set
  double w_fro2 = 0.0;     // ||W||_F^2 of the compressed layer
  double w_cap = 0.0;      // c_hat R^2
  double b_norm = 0.0;
  double b_cap = 0.0;      // R_b / (1 - delta)
  bool norm_ok = true;
};

struct CompressionReport {
  std::vector<LayerCompressionReport> layers;  // ell = 1..L
  double end_to_end_sq = 0.0;  // mean squared gap to the teacher on the eval set
  double delta1_pred = 0.0;    // predicted telescope sum for these lambdas
  bool ok = true;
  std::vector<std::string> errors;
};

struct CompressionResult {
  Network net;
  CompressionReport report;
};

// Builds the compressed network layer by layer (top-down), regressing each
// layer's sampled targets on the teacher's own previous-layer activations,
// then audits norms and measures per-layer and end-to-end errors on X_eval.
CompressionResult compress_network(const Network& teacher, const CompressionPlan& plan,
                                   const Matrix& X_fit, const Matrix& X_eval,
                                   const NormBudget& budget);

}  // namespace netkernel
