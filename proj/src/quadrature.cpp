#include "netkernel/quadrature.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "netkernel/bounds.hpp"
#include "netkernel/rng.hpp"

namespace netkernel {

namespace {

constexpr uint64_t kPlanTag = 0x706c616e;  // stream tag for plan sampling

std::vector<double> cumulative(const Vector& q) {
  std::vector<double> cum(static_cast<size_t>(q.size()));
  double acc = 0.0;
  for (int j = 0; j < q.size(); ++j) {
    acc += q[j];
    cum[static_cast<size_t>(j)] = acc;
  }
  // guard the tail against roundoff so every u in [0,1) lands inside
  cum.back() = std::max(cum.back(), 1.0);
  return cum;
}

}  // namespace

NodeSample sample_nodes(const Vector& q, int m, uint64_t seed, double delta,
                        int max_attempts) {
  const int src = static_cast<int>(q.size());
  if (src <= 0) throw std::invalid_argument("sample_nodes: empty distribution");
  if (m <= 0) throw std::invalid_argument("sample_nodes: m must be positive");
  if (!(delta > 0.0 && delta < 0.5))
    throw std::invalid_argument("sample_nodes: delta must lie in (0, 1/2)");
  if (max_attempts < 1) max_attempts = 1;

  double total = 0.0;
  for (int j = 0; j < src; ++j) {
    if (!(q[j] >= 0.0))
      throw std::invalid_argument("sample_nodes: q has negative or non-finite mass");
    total += q[j];
  }
  if (!(total > 0.0)) throw std::invalid_argument("sample_nodes: q sums to zero");
  const Vector qn = q / total;
  const std::vector<double> cum = cumulative(qn);
  const double cap = 1.0 / (1.0 - 2.0 * delta);

  Rng rng(seed);
  NodeSample out;
  out.ids.resize(static_cast<size_t>(m));
  out.w.resize(m);
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    double mass = 0.0;
    for (int j = 0; j < m; ++j) {
      const double u = rng.uniform01();
      const auto it = std::upper_bound(cum.begin(), cum.end(), u);
      const int id = static_cast<int>(std::distance(cum.begin(), it));
      out.ids[static_cast<size_t>(j)] = std::min(id, src - 1);
      const double wj = 1.0 / std::sqrt(qn[out.ids[static_cast<size_t>(j)]] *
                                        static_cast<double>(src));
      out.w[j] = wj;
      mass += wj * wj;
    }
    out.weight_mass = mass / static_cast<double>(m);
    out.attempts = attempt;
    if (out.weight_mass <= cap) {
      out.ok = true;
      return out;
    }
  }
  out.ok = false;
  return out;
}

BetaFit solve_beta(const Matrix& targets, const Matrix& design, double cap) {
  const int n = static_cast<int>(design.rows());
  const int m = static_cast<int>(design.cols());
  const int p = static_cast<int>(targets.cols());
  if (targets.rows() != n)
    throw std::invalid_argument("solve_beta: row count mismatch");
  if (n == 0 || m == 0 || p == 0)
    throw std::invalid_argument("solve_beta: empty problem");
  if (!(cap > 0.0)) throw std::invalid_argument("solve_beta: cap must be positive");
  if (!design.allFinite() || !targets.allFinite())
    throw std::invalid_argument("solve_beta: non-finite input");

  const Matrix G = design.transpose() * design;
  const double trace = G.trace();

  BetaFit fit;
  fit.beta = Matrix::Zero(p, m);
  fit.sq_norm = Vector::Zero(p);
  fit.multiplier = Vector::Zero(p);
  fit.max_col_mse = 0.0;
  if (!(trace > 0.0)) {
    // dead design: the zero solution is the minimal-norm least squares fit
    for (int t = 0; t < p; ++t) {
      const double mse = targets.col(t).squaredNorm() / static_cast<double>(n);
      fit.max_col_mse = std::max(fit.max_col_mse, mse);
    }
    return fit;
  }
  const double floor = 1e-12 * trace;
  fit.ridge_floor = floor;

  Eigen::SelfAdjointEigenSolver<Matrix> es(G);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("solve_beta: eigendecomposition failed");
  const Vector d = es.eigenvalues().cwiseMax(0.0);
  const Matrix& U = es.eigenvectors();

  const Matrix C = design.transpose() * targets;  // m x p
  const Matrix Z = U.transpose() * C;             // spectral coordinates

  const auto sq_norm_at = [&](const Vector& z, double gamma) {
    double s = 0.0;
    for (int i = 0; i < m; ++i) {
      const double r = z[i] / (d[i] + gamma);
      s += r * r;
    }
    return s;
  };

  for (int t = 0; t < p; ++t) {
    const Vector z = Z.col(t);
    double gamma = floor;
    double n2 = sq_norm_at(z, gamma);
    if (n2 > cap) {
      double lo = gamma;
      double hi = std::max(gamma, trace);
      int guard = 0;
      while (sq_norm_at(z, hi) > cap) {
        hi *= 2.0;
        if (++guard > 500)
          throw std::runtime_error("solve_beta: ridge search failed to bracket");
      }
      for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (sq_norm_at(z, mid) > cap)
          lo = mid;
        else
          hi = mid;
        if (hi - lo <= 1e-12 * hi) break;
      }
      gamma = hi;  // feasible side of the bracket
      n2 = sq_norm_at(z, gamma);
      fit.multiplier[t] = gamma;
    }
    Vector coeff(m);
    for (int i = 0; i < m; ++i) coeff[i] = z[i] / (d[i] + gamma);
    fit.beta.row(t) = (U * coeff).transpose();
    fit.sq_norm[t] = fit.beta.row(t).squaredNorm();
    const double mse =
        (design * fit.beta.row(t).transpose() - targets.col(t)).squaredNorm() /
        static_cast<double>(n);
    fit.max_col_mse = std::max(fit.max_col_mse, mse);
  }
  if (!fit.beta.allFinite())
    throw std::runtime_error("solve_beta: produced non-finite coefficients");
  return fit;
}

namespace {

// override_m < 0 sizes the layer by required_width; otherwise the given width
// is used verbatim
LayerPlan plan_layer_at_lambda(const Network& teacher, const Matrix& X, int ell,
                               double lambda, double delta, uint64_t seed,
                               int override_m = -1) {
  LayerPlan lp;
  lp.layer = ell;
  lp.lambda = lambda;
  const Matrix Phi = feature_matrix(teacher, X, ell - 1);
  const Spectrum spec = layer_spectrum(teacher, X, ell - 1);
  lp.dof_value = dof(spec, lambda);
  if (override_m > 0) {
    lp.m = override_m;
  } else if (lp.dof_value > 0.0) {
    bool floored = false;
    lp.m = required_width(lp.dof_value, delta, &floored);
    lp.width_floored = floored;
  } else {
    lp.m = 1;
    lp.width_floored = true;
  }
  const LeverageScores lev = leverage_scores(Phi, lambda);
  lp.degenerate_q = lev.degenerate;
  const uint64_t stream = derive_stream(seed, {kPlanTag, static_cast<uint64_t>(ell)});
  const NodeSample ns = sample_nodes(lev.q, lp.m, stream, delta / 2.0);
  lp.node_ids = ns.ids;
  lp.w = ns.w;
  lp.weight_mass = ns.weight_mass;
  lp.attempts = ns.attempts;
  lp.ok = ns.ok;
  return lp;
}

}  // namespace

CompressionPlan plan_compression(const Network& teacher, const Matrix& X,
                                 const std::vector<double>& lambdas, double delta,
                                 uint64_t seed) {
  validate(teacher);
  const int L = teacher.depth();
  if (L < 2) throw std::invalid_argument("plan_compression: need depth >= 2");
  if (static_cast<int>(lambdas.size()) != L - 1)
    throw std::invalid_argument("plan_compression: need one lambda per layer 2..L");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("plan_compression: delta must lie in (0, 1)");

  CompressionPlan plan;
  plan.delta = delta;
  plan.sampling_delta = delta / 2.0;
  for (int ell = 2; ell <= L; ++ell) {
    const double lambda = lambdas[static_cast<size_t>(ell - 2)];
    if (!(lambda > 0.0))
      throw std::invalid_argument("plan_compression: lambda must be positive");
    plan.layers[ell] = plan_layer_at_lambda(teacher, X, ell, lambda, delta, seed);
  }
  return plan;
}

CompressionPlan plan_compression_widths(const Network& teacher, const Matrix& X,
                                        const std::vector<int>& widths, double delta,
                                        uint64_t seed) {
  validate(teacher);
  const int L = teacher.depth();
  if (L < 2) throw std::invalid_argument("plan_compression_widths: need depth >= 2");
  if (static_cast<int>(widths.size()) != L - 1)
    throw std::invalid_argument(
        "plan_compression_widths: need one width per layer 2..L");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("plan_compression_widths: delta must lie in (0, 1)");

  CompressionPlan plan;
  plan.delta = delta;
  plan.sampling_delta = delta / 2.0;
  for (int ell = 2; ell <= L; ++ell) {
    const int m = widths[static_cast<size_t>(ell - 2)];
    if (m < 1)
      throw std::invalid_argument("plan_compression_widths: widths must be >= 1");
    const Spectrum spec = layer_spectrum(teacher, X, ell - 1);
    const auto width_at = [&](double lambda) {
      return required_width(dof(spec, lambda), delta);
    };
    // width_at is nonincreasing in lambda; find the smallest lambda whose
    // required width fits the budget m
    double mu_max = 0.0;
    double mu_min_pos = 0.0;
    for (int j = 0; j < spec.mu.size(); ++j) {
      mu_max = std::max(mu_max, spec.mu[j]);
      if (spec.mu[j] > 0.0) mu_min_pos = spec.mu[j];
    }
    bool lambda_floored = false;
    double lambda;
    if (mu_max <= 0.0) {
      lambda = 1e-12;
      lambda_floored = true;
    } else {
      double lo = std::max(mu_min_pos * 1e-8, mu_max * 1e-16);
      double hi = 10.0 * mu_max;
      int guard = 0;
      while (width_at(hi) > m) {
        hi *= 4.0;
        if (++guard > 200)
          throw std::runtime_error(
              "plan_compression_widths: width inversion failed to bracket");
      }
      if (width_at(lo) <= m) {
        lambda = lo;
        lambda_floored = true;  // budget exceeds what the spectrum resolves
      } else {
        for (int it = 0; it < 120; ++it) {
          const double mid = std::sqrt(lo * hi);
          if (width_at(mid) > m)
            lo = mid;
          else
            hi = mid;
          if (hi / lo <= 1.0 + 1e-12) break;
        }
        lambda = hi;
      }
    }
    LayerPlan lp = plan_layer_at_lambda(teacher, X, ell, lambda, delta, seed, m);
    lp.lambda_floored = lambda_floored;
    plan.layers[ell] = lp;
  }
  return plan;
}

CompressionPlan identity_plan(const Network& teacher) {
  validate(teacher);
  const int L = teacher.depth();
  if (L < 2) throw std::invalid_argument("identity_plan: need depth >= 2");
  CompressionPlan plan;
  plan.delta = 0.1;
  plan.sampling_delta = 0.05;
  for (int ell = 2; ell <= L; ++ell) {
    LayerPlan lp;
    lp.layer = ell;
    lp.lambda = 0.0;
    lp.m = teacher.width(ell);
    lp.dof_value = static_cast<double>(lp.m);
    lp.node_ids.resize(static_cast<size_t>(lp.m));
    for (int j = 0; j < lp.m; ++j) lp.node_ids[static_cast<size_t>(j)] = j;
    lp.w = Vector::Ones(lp.m);
    lp.weight_mass = 1.0;
    lp.attempts = 1;
    lp.ok = true;
    plan.layers[ell] = lp;
  }
  return plan;
}

namespace {

// design matrix for fitting student layer ell: weighted teacher activations at
// the plan's sampled nodes
Matrix build_design(const Matrix& acts_prev, const LayerPlan& lp) {
  const int n = static_cast<int>(acts_prev.rows());
  Matrix D(n, lp.m);
  for (int j = 0; j < lp.m; ++j)
    D.col(j) = acts_prev.col(lp.node_ids[static_cast<size_t>(j)]) * lp.w[j];
  return D;
}

struct TargetSet {
  Matrix cols;                  // n x n_unique
  std::vector<int> unique_ids;  // teacher node id per unique column
  std::vector<int> expand;      // sampled index -> unique column
};

TargetSet build_targets(const Matrix& pre, const Vector& bias,
                        const std::vector<int>& out_ids) {
  TargetSet ts;
  std::map<int, int> seen;
  ts.expand.resize(out_ids.size());
  for (size_t i = 0; i < out_ids.size(); ++i) {
    const int id = out_ids[i];
    auto it = seen.find(id);
    if (it == seen.end()) {
      it = seen.emplace(id, static_cast<int>(ts.unique_ids.size())).first;
      ts.unique_ids.push_back(id);
    }
    ts.expand[i] = it->second;
  }
  ts.cols.resize(pre.rows(), static_cast<int>(ts.unique_ids.size()));
  for (size_t u = 0; u < ts.unique_ids.size(); ++u) {
    const int id = ts.unique_ids[u];
    ts.cols.col(static_cast<int>(u)) =
        pre.col(id).array() - bias[id];
  }
  return ts;
}

double max_col_mse(const Matrix& design, const Matrix& beta, const Matrix& targets) {
  double worst = 0.0;
  const double n = static_cast<double>(design.rows());
  for (int t = 0; t < targets.cols(); ++t) {
    const double mse =
        (design * beta.row(t).transpose() - targets.col(t)).squaredNorm() / n;
    worst = std::max(worst, mse);
  }
  return worst;
}

}  // namespace

CompressionResult compress_network(const Network& teacher, const CompressionPlan& plan,
                                   const Matrix& X_fit, const Matrix& X_eval,
                                   const NormBudget& budget) {
  validate(teacher);
  validate(budget);
  const int L = teacher.depth();
  if (L < 2) throw std::invalid_argument("compress_network: need depth >= 2");
  if (X_fit.cols() != teacher.input_dim() || X_eval.cols() != teacher.input_dim())
    throw std::invalid_argument("compress_network: input dimension mismatch");
  for (int ell = 2; ell <= L; ++ell)
    if (plan.layers.find(ell) == plan.layers.end())
      throw std::invalid_argument("compress_network: plan is missing a layer");

  CompressionResult res;
  res.net.activation = teacher.activation;
  res.net.layers.resize(static_cast<size_t>(L));
  res.report.layers.resize(static_cast<size_t>(L));

  for (int ell = 2; ell <= L; ++ell) {
    const LayerPlan& lp = plan.layers.at(ell);
    if (!lp.ok) {
      res.report.ok = false;
      res.report.errors.push_back("layer " + std::to_string(ell) +
                                  ": node sampling exhausted the weight-mass cap");
    }
  }

  const double w_cap = budget.c_hat() * budget.R * budget.R;
  const double b_cap = budget.R_bar_b();
  const double R = budget.R;
  const double c_hat = budget.c_hat();

  // teacher forward passes, computed once per input set
  std::vector<Matrix> acts_fit(static_cast<size_t>(L));   // eta(F_ell), ell=1..L-1
  std::vector<Matrix> acts_eval(static_cast<size_t>(L));
  std::vector<Matrix> pre_fit(static_cast<size_t>(L + 1));   // F_ell, ell=1..L
  std::vector<Matrix> pre_eval(static_cast<size_t>(L + 1));
  for (int ell = 1; ell <= L; ++ell) {
    pre_fit[static_cast<size_t>(ell)] = layer_preactivations(teacher, X_fit, ell);
    pre_eval[static_cast<size_t>(ell)] = layer_preactivations(teacher, X_eval, ell);
    if (ell < L) {
      acts_fit[static_cast<size_t>(ell)] = layer_activations(teacher, X_fit, ell);
      acts_eval[static_cast<size_t>(ell)] = layer_activations(teacher, X_eval, ell);
    }
  }

  for (int ell = L; ell >= 1; --ell) {
    LayerCompressionReport& rep = res.report.layers[static_cast<size_t>(ell - 1)];
    rep.layer = ell;
    rep.w_cap = w_cap;
    rep.b_cap = b_cap;
    Layer& lay = res.net.layers[static_cast<size_t>(ell - 1)];
    const Layer& tlay = teacher.layers[static_cast<size_t>(ell - 1)];

    if (ell == 1) {
      // the first layer copies the teacher's sampled rows; no regression
      const LayerPlan& out = plan.layers.at(2);
      const int m2 = out.m;
      const double scale = 1.0 / std::sqrt(static_cast<double>(m2));
      lay.W.resize(m2, teacher.input_dim());
      lay.b.resize(m2);
      for (int i = 0; i < m2; ++i) {
        const int src = out.node_ids[static_cast<size_t>(i)];
        lay.W.row(i) = scale * out.w[i] * tlay.W.row(src);
        lay.b[i] = scale * out.w[i] * tlay.b[src];
      }
      rep.lambda = 0.0;
      rep.m = m2;
      rep.err_emp = 0.0;
      rep.err_fit = 0.0;
      rep.err_bound = 0.0;
      rep.prop_bound = 0.0;
    } else {
      const LayerPlan& lp = plan.layers.at(ell);
      rep.lambda = lp.lambda;
      rep.m = lp.m;
      const double cap = 4.0 * R * R / static_cast<double>(lp.m);
      const Matrix D_fit = build_design(acts_fit[static_cast<size_t>(ell - 1)], lp);
      const Matrix D_eval = build_design(acts_eval[static_cast<size_t>(ell - 1)], lp);

      if (ell == L) {
        Matrix target(pre_fit[static_cast<size_t>(L)].rows(), 1);
        target.col(0) = pre_fit[static_cast<size_t>(L)].col(0).array() - tlay.b[0];
        const BetaFit fit = solve_beta(target, D_fit, cap);
        const double scale = std::sqrt(static_cast<double>(lp.m));
        lay.W = scale * fit.beta;
        lay.b = tlay.b;
        rep.err_fit = fit.max_col_mse;
        Matrix target_eval(pre_eval[static_cast<size_t>(L)].rows(), 1);
        target_eval.col(0) =
            pre_eval[static_cast<size_t>(L)].col(0).array() - tlay.b[0];
        rep.err_emp = max_col_mse(D_eval, fit.beta, target_eval);
      } else {
        const LayerPlan& out = plan.layers.at(ell + 1);
        const TargetSet ts = build_targets(pre_fit[static_cast<size_t>(ell)],
                                           tlay.b, out.node_ids);
        const BetaFit fit = solve_beta(ts.cols, D_fit, cap);
        const int m_out = out.m;
        const double scale =
            std::sqrt(static_cast<double>(lp.m) / static_cast<double>(m_out));
        const double bscale = 1.0 / std::sqrt(static_cast<double>(m_out));
        lay.W.resize(m_out, lp.m);
        lay.b.resize(m_out);
        for (int i = 0; i < m_out; ++i) {
          const int u = ts.expand[static_cast<size_t>(i)];
          const int src = out.node_ids[static_cast<size_t>(i)];
          lay.W.row(i) = scale * out.w[i] * fit.beta.row(u);
          lay.b[i] = bscale * out.w[i] * tlay.b[src];
        }
        rep.err_fit = fit.max_col_mse;
        const TargetSet ts_eval = build_targets(pre_eval[static_cast<size_t>(ell)],
                                                tlay.b, out.node_ids);
        rep.err_emp = max_col_mse(D_eval, fit.beta, ts_eval.cols);
      }
      rep.prop_bound = 4.0 * lp.lambda * R * R;
      rep.err_bound = 2.0 *
                      std::sqrt(std::pow(c_hat, static_cast<double>(L - ell))) *
                      std::pow(R, static_cast<double>(L - ell + 1)) *
                      std::sqrt(lp.lambda);
    }

    rep.w_fro2 = lay.W.squaredNorm();
    rep.b_norm = lay.b.norm();
    rep.norm_ok = rep.w_fro2 <= w_cap * (1.0 + 1e-9) &&
                  rep.b_norm <= b_cap * (1.0 + 1e-9);
    if (!rep.norm_ok) {
      res.report.ok = false;
      res.report.errors.push_back("layer " + std::to_string(ell) +
                                  ": audited norm exceeds its budget");
    }
  }

  validate(res.net);
  const Vector y_teacher = forward(teacher, X_eval);
  const Vector y_student = forward(res.net, X_eval);
  res.report.end_to_end_sq =
      (y_student - y_teacher).squaredNorm() / static_cast<double>(X_eval.rows());

  std::vector<double> lambdas;
  for (int ell = 2; ell <= L; ++ell)
    lambdas.push_back(plan.layers.at(ell).lambda);
  res.report.delta1_pred = delta1(lambdas, budget);
  return res;
}

}  // namespace netkernel
