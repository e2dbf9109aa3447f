#include "netkernel/bounds.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace netkernel {

double log_plus(double x) { return std::max(1.0, std::log(x)); }

int required_width(double N, double delta, bool* floored) {
  if (!(N > 0.0)) throw std::invalid_argument("required_width: N must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw std::invalid_argument("required_width: delta must be in (0,1)");
  const double raw = 5.0 * N * std::log(32.0 * N / delta);
  const double m = std::ceil(raw);
  if (floored) *floored = m < 1.0;
  return m < 1.0 ? 1 : static_cast<int>(m);
}

double g_hat(int depth, const NormBudget& budget) {
  if (depth < 1) throw std::invalid_argument("g_hat: depth must be >= 1");
  validate(budget);
  const double rb = budget.R_bar();
  double acc = depth * std::pow(rb, depth - 1) * budget.D_x;
  for (int l = 1; l <= depth; ++l) acc += std::pow(rb, depth - l);
  return acc;
}

double delta1(const std::vector<double>& lambdas, const NormBudget& budget) {
  validate(budget);
  const int L = static_cast<int>(lambdas.size()) + 1;
  double acc = 0.0;
  for (int l = 2; l <= L; ++l) {
    const double lam = lambdas[l - 2];
    if (!(lam >= 0.0)) throw std::invalid_argument("delta1: lambdas must be nonnegative");
    acc += 2.0 * std::sqrt(std::pow(budget.c_hat(), L - l)) * std::pow(budget.R, L - l + 1) *
           std::sqrt(lam);
  }
  return acc;
}

namespace {

double width_product_sum(const std::vector<int>& widths) {
  if (widths.size() < 2) throw std::invalid_argument("widths must hold m_1..m_{L+1}");
  double S = 0.0;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    if (widths[l] < 1 || widths[l + 1] < 1)
      throw std::invalid_argument("widths must be positive");
    S += static_cast<double>(widths[l]) * static_cast<double>(widths[l + 1]);
  }
  return S;
}

}  // namespace

double delta2(double n, double sigma, const std::vector<int>& widths,
              const NormBudget& budget) {
  validate(budget);
  if (!(n > 0.0)) throw std::invalid_argument("delta2: n must be positive");
  if (!(sigma > 0.0)) throw std::invalid_argument("delta2: sigma must be positive");
  const double S = width_product_sum(widths);
  const double L = static_cast<int>(widths.size()) - 1;
  const double gh = g_hat(static_cast<int>(L), budget);
  const double scale = std::max(budget.R_bar(), budget.R_bar_b());
  const double arg = 1.0 + 4.0 * std::sqrt(2.0) * gh * scale * std::sqrt(n) / (sigma * std::sqrt(S));
  const double sq = (2.0 / n) * S * log_plus(arg);
  return std::sqrt(sq);
}

double table1_general(double n, double sigma, double r_hat_inf, double R,
                      const std::vector<int>& widths, const std::vector<double>& lambdas) {
  if (!(n > 0.0)) throw std::invalid_argument("table1: n must be positive");
  const int L = static_cast<int>(widths.size()) - 1;
  if (static_cast<int>(lambdas.size()) != L - 1)
    throw std::invalid_argument("table1_general: lambdas must hold lambda_2..lambda_L");
  double bias = 0.0;
  for (int l = 2; l <= L; ++l) bias += std::pow(R, L - l + 1) * lambdas[l - 2];
  bias *= L;
  const double S = width_product_sum(widths);
  const double var = (sigma * sigma + r_hat_inf * r_hat_inf) / n * S * std::log(n);
  return bias + var;
}

double table1_finite(double n, double sigma, double r_hat_inf, const std::vector<int>& widths) {
  if (!(n > 0.0)) throw std::invalid_argument("table1: n must be positive");
  const double S = width_product_sum(widths);
  return (sigma * sigma + r_hat_inf * r_hat_inf) / n * S * std::log(n);
}

double table1_poly(double n, double R, int d_x, const std::vector<double>& s_list) {
  if (!(n > 0.0)) throw std::invalid_argument("table1: n must be positive");
  if (d_x < 1) throw std::invalid_argument("table1_poly: d_x must be >= 1");
  const int L = static_cast<int>(s_list.size()) + 1;
  const double Rv = std::max(R, 1.0);
  double bias = 0.0;
  for (int l = 2; l <= L; ++l) {
    const double s = s_list[l - 2];
    if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("table1_poly: s must be in (0,1)");
    bias += std::pow(Rv, L - l + 1) * std::pow(n, -1.0 / (1.0 + 2.0 * s)) * std::log(n);
  }
  bias *= L;
  const double var = static_cast<double>(d_x) * static_cast<double>(d_x) / n * std::log(n);
  return bias + var;
}

ParamFactor square_factor() {
  return [](int m) { return static_cast<double>(m) * static_cast<double>(m); };
}

ParamFactor two_layer_factor(int d_x) {
  return [d_x](int m) { return static_cast<double>(d_x + 1) * static_cast<double>(m); };
}

BalanceResult balance_lambda(double n, const Spectrum& spec, double delta,
                             const ParamFactor& factor) {
  if (!(n > 0.0)) throw std::invalid_argument("balance_lambda: n must be positive");
  BalanceResult res;
  const double total = spec.mu.size() ? spec.mu.sum() : 0.0;
  if (total <= 0.0) {
    res.degenerate = true;
    res.m = 1;
    res.lambda = factor(1) / n;
    res.N = 0.0;
    res.converged = true;
    return res;
  }

  auto width_at = [&](double lam) {
    const double N = dof(spec, lam);
    return N > 0.0 ? required_width(N, delta) : 1;
  };
  auto target = [&](double lam) { return factor(width_at(lam)) / n; };

  // damped fixed point in log space
  double lam = std::max(factor(1) / n, 1e-300);
  double prev = lam;
  bool cycling = false;
  for (int it = 1; it <= 100; ++it) {
    res.iterations = it;
    const double t = target(lam);
    const double next = std::exp(0.5 * std::log(lam) + 0.5 * std::log(t));
    if (std::abs(next - lam) <= 0.01 * lam) {
      res.lambda = next;
      res.converged = true;
      break;
    }
    if (it > 2 && std::abs(next - prev) <= 1e-6 * prev) {  // period-2 cycle
      cycling = true;
      break;
    }
    prev = lam;
    lam = next;
  }

  if (!res.converged) {
    // g(lambda) = factor(m(lambda))/n - lambda is nonincreasing minus
    // increasing, so it has a single sign change: bisect on it
    res.used_bisection = true;
    double lo = 1e-12, hi = std::max(1.0, factor(width_at(1e-12)) / n) * 10.0;
    for (int it = 0; it < 200; ++it) {
      const double mid = std::sqrt(lo * hi);
      if (target(mid) > mid)
        lo = mid;
      else
        hi = mid;
    }
    res.lambda = std::sqrt(lo * hi);
    res.converged = true;
    (void)cycling;
  }

  res.N = dof(spec, res.lambda);
  res.m = width_at(res.lambda);
  return res;
}

PolyRate poly_rate(double n, double a, double s, RateKind kind, int d_x) {
  if (!(n > 1.0)) throw std::invalid_argument("poly_rate: n must exceed 1");
  if (!(a > 0.0)) throw std::invalid_argument("poly_rate: a must be positive");
  if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("poly_rate: s must be in (0,1)");
  PolyRate out;
  if (kind == RateKind::kDeep) {
    out.lambda_star = std::pow(a, 2.0 * s / (1.0 + 2.0 * s)) * std::pow(n, -1.0 / (1.0 + 2.0 * s));
    out.exponent = -1.0 / (1.0 + 2.0 * s);
    out.error_term = out.lambda_star * std::log(n);
  } else {
    if (d_x < 1) throw std::invalid_argument("poly_rate: two-layer form needs d_x");
    const double ratio = n / static_cast<double>(d_x + 1);
    out.lambda_star =
        std::pow(a, s / (1.0 + s)) * std::pow(ratio, -1.0 / (1.0 + s)) * std::log(n);
    out.exponent = -1.0 / (1.0 + s);
    out.error_term = std::pow(a, s / (1.0 + s)) * std::pow(static_cast<double>(d_x + 1), 1.0 / (1.0 + s)) *
                     std::pow(n, -1.0 / (1.0 + s)) * std::log(n);
  }
  return out;
}

DofEnvelopeBound dof_envelope_bound(double a, double s, double lambda) {
  if (!(a > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("dof_envelope_bound: a, lambda > 0");
  if (!(s > 0.0 && s < 1.0)) throw std::invalid_argument("dof_envelope_bound: s must be in (0,1)");
  const double c = (a / lambda) / (1.0 / s - 1.0);
  DofEnvelopeBound out;
  out.M = std::ceil(std::pow(c, s));
  out.bound = out.M + (a / lambda) / (1.0 / s - 1.0) * std::pow(out.M, 1.0 - 1.0 / s);
  return out;
}

BoundReport make_bound_report(double n, double sigma, const NormBudget& budget,
                              const std::vector<int>& widths,
                              const std::vector<double>& lambdas) {
  validate(budget);
  BoundReport rep;
  rep.n = n;
  rep.sigma = sigma;
  if (sigma < 1e-8) {
    std::cerr << "[bounds] WARNING: sigma = " << sigma
              << " is below the 1e-8 floor; flooring it. delta2 and the variance terms "
                 "are not meaningful at sigma = 0.\n";
    rep.sigma = 1e-8;
    rep.sigma_floored = true;
  }
  rep.budget = budget;
  rep.widths = widths;
  rep.lambdas = lambdas;
  const int L = static_cast<int>(widths.size()) - 1;
  if (static_cast<int>(lambdas.size()) != L - 1)
    throw std::invalid_argument("make_bound_report: lambdas must hold lambda_2..lambda_L");
  rep.r_hat_inf = sup_norm_bound(L, budget);
  rep.g_hat = g_hat(L, budget);
  rep.delta1 = delta1(lambdas, budget);
  rep.delta2 = delta2(n, rep.sigma, widths, budget);
  rep.eps_n = rep.delta1 + rep.sigma * rep.delta2;
  rep.eps_tilde_n = rep.delta1 + rep.delta2;
  const double ri2 = rep.r_hat_inf * rep.r_hat_inf;
  const double s2 = rep.sigma * rep.sigma;
  // ERM: bias^2 + variance + the high-probability tail term, constants dropped
  const double tail =
      (ri2 + s2) / n * (log_plus(std::sqrt(n) / std::min(rep.sigma / rep.r_hat_inf, 1.0)) + 1.0);
  rep.erm_bound = rep.delta1 * rep.delta1 + (s2 + ri2) * rep.delta2 * rep.delta2 + tail;
  rep.bayes_bound =
      std::max(1.0, ri2 / s2) * (rep.delta1 * rep.delta1 + s2 * rep.delta2 * rep.delta2);
  bool all_zero = true;
  for (double l : lambdas)
    if (l != 0.0) all_zero = false;
  if (all_zero) {
    rep.table_row = "finite_dim";
    rep.table_value = table1_finite(n, rep.sigma, rep.r_hat_inf, widths);
  } else {
    rep.table_row = "general";
    rep.table_value = table1_general(n, rep.sigma, rep.r_hat_inf, budget.R, widths, lambdas);
  }
  return rep;
}

}  // namespace netkernel
