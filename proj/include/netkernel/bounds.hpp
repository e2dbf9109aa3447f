#pragma once

#include <functional>
#include <string>
#include <vector>

#include "netkernel/network.hpp"
#include "netkernel/spectral.hpp"

namespace netkernel {

// max{1, log x}; the variance term uses this guarded logarithm
double log_plus(double x);

// Width sufficient for a layer with degree of freedom N at confidence delta:
// smallest integer m >= 5 N log(32 N / delta), floored at 1 (floored flag set
// when the formula lands below 1). N must be positive.
int required_width(double N, double delta, bool* floored = nullptr);

// G_hat = L R_bar^{L-1} D_x + sum_{l=1..L} R_bar^{L-l}
double g_hat(int depth, const NormBudget& budget);

// delta1 = sum_{l=2..L} 2 sqrt(c_hat^{L-l}) R^{L-l+1} sqrt(lambda_l);
// lambdas holds lambda_2..lambda_L (size L-1, possibly empty for L = 1).
double delta1(const std::vector<double>& lambdas, const NormBudget& budget);

// delta2^2 = (2/n) S log_plus(1 + 4 sqrt(2) G_hat max{R_bar, R_bar_b} sqrt(n)
//            / (sigma sqrt(S))), S = sum_l m_l m_{l+1}.
// widths holds m_1..m_{L+1} (m_1 = d_x, m_{L+1} = 1). sigma = 0 throws.
double delta2(double n, double sigma, const std::vector<int>& widths,
              const NormBudget& budget);

// Table rows for the expected-risk bound, up to universal constants.
// widths: m_1..m_{L+1}; lambdas: lambda_2..lambda_L; s_list: s_2..s_L.
double table1_general(double n, double sigma, double r_hat_inf, double R,
                      const std::vector<int>& widths, const std::vector<double>& lambdas);
double table1_finite(double n, double sigma, double r_hat_inf, const std::vector<int>& widths);
double table1_poly(double n, double R, int d_x, const std::vector<double>& s_list);

struct BalanceResult {
  double lambda = 0.0;
  int m = 1;
  double N = 0.0;         // dof at the balanced lambda
  int iterations = 0;
  bool converged = false;
  bool used_bisection = false;
  bool degenerate = false;  // all-zero spectrum; lambda = factor(1)/n, m = 1
};

// Parameter-count factor for the balance lambda = factor(m) / n. Eq-style
// default m^2 (deep nets, uniform widths); two-layer networks count their
// parameters exactly: (d_x + 1) m.
using ParamFactor = std::function<double(int)>;
ParamFactor square_factor();
ParamFactor two_layer_factor(int d_x);

// Damped fixed point of lambda = factor(m(lambda))/n with
// m(lambda) = required_width(N(lambda), delta); 1% relative tolerance on
// lambda, 100-iteration cap, bisection fallback when the iteration cycles.
BalanceResult balance_lambda(double n, const Spectrum& spec, double delta,
                             const ParamFactor& factor = square_factor());

enum class RateKind { kDeep, kTwoLayer };

struct PolyRate {
  double lambda_star = 0.0;
  double exponent = 0.0;    // error ~ n^{exponent} log n
  double error_term = 0.0;  // the full predicted term incl. the log factor
};

// Balanced lambda and predicted rate for a layer kernel with eigendecay
// mu_j <= a j^{-1/s}. Deep: lambda* = a^{2s/(1+2s)} n^{-1/(1+2s)}, error
// lambda* log n. Two-layer: lambda* = a^{s/(1+s)} (n/(d_x+1))^{-1/(1+s)}
// log n, error ~ n^{-1/(1+s)} log n.
PolyRate poly_rate(double n, double a, double s, RateKind kind, int d_x = 0);

struct DofEnvelopeBound {
  double M = 0.0;
  double bound = 0.0;
};

// Closed-form cap on N(lambda) under mu_j <= a j^{-1/s}:
// N(lambda) <= M + (a/lambda) (1/s - 1)^{-1} M^{1 - 1/s},
// M = ceil(((a/lambda) (1/s - 1)^{-1})^s). Requires s in (0, 1).
DofEnvelopeBound dof_envelope_bound(double a, double s, double lambda);

struct BoundReport {
  double n = 0.0;
  double sigma = 0.0;
  bool sigma_floored = false;
  NormBudget budget;
  std::vector<int> widths;       // m_1..m_{L+1}
  std::vector<double> lambdas;   // lambda_2..lambda_L
  double r_hat_inf = 0.0;
  double g_hat = 0.0;
  double delta1 = 0.0;
  double delta2 = 0.0;
  double eps_n = 0.0;        // delta1 + sigma delta2
  double eps_tilde_n = 0.0;  // delta1 + delta2
  // headline bounds, each up to an unspecified universal constant
  double erm_bound = 0.0;    // delta1^2 + (sigma^2 + R_inf^2) delta2^2 + tail term
  double bayes_bound = 0.0;  // max{1, R_inf^2/sigma^2} (delta1^2 + sigma^2 delta2^2)
  std::string table_row;     // "general" | "finite_dim"
  double table_value = 0.0;
};

// Evaluates every formula above for one configuration. sigma below 1e-8 is
// floored (with a stderr warning) so downstream terms stay finite.
BoundReport make_bound_report(double n, double sigma, const NormBudget& budget,
                              const std::vector<int>& widths,
                              const std::vector<double>& lambdas);

}  // namespace netkernel
