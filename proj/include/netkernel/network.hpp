#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

namespace netkernel {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class Activation { kRelu, kIdentity };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// One affine stage x -> W x + b.
struct Layer {
  Matrix W;
  Vector b;
};

// Feedforward net f = A_L . eta . A_{L-1} . ... . eta . A_1 with scalar
// output (the last layer has a single row). eta acts elementwise between
// layers; it is positively homogeneous (relu or identity), which is what the
// rescaling identities in the tests rely on.
struct Network {
  std::vector<Layer> layers;
  Activation activation = Activation::kRelu;

  int depth() const { return static_cast<int>(layers.size()); }
  int input_dim() const {
    return layers.empty() ? 0 : static_cast<int>(layers.front().W.cols());
  }
  // width of the input to layer ell (1-based); width(1) = d_x,
  // width(L+1) = 1 = output dimension
  int width(int ell) const;
};

// Shape chaining, single output row, finite entries. Throws
// std::invalid_argument on violation.
void validate(const Network& net);

// Norm budget for the hypothesis class: per-layer Frobenius cap R_bar on
// weights and l2 cap R_bar_b on biases, derived from the base radii (R, R_b),
// the input radius D_x and the quadrature confidence delta.
struct NormBudget {
  double R = 1.0;
  double R_b = 1.0;
  double D_x = 1.0;
  double delta = 0.1;

  double c_hat() const { return 4.0 / (1.0 - delta); }
  double R_bar() const { return std::sqrt(c_hat()) * R; }
  double R_bar_b() const { return R_b / (1.0 - delta); }
};

// R > 0, R_b >= 0, D_x > 0, delta in (0, 1/2). Throws std::invalid_argument.
void validate(const NormBudget& budget);

struct Dataset {
  Matrix X;  // n x d_x, one sample per row
  Vector y;  // n
  double noise_sigma = 0.0;
};

// Evaluates the network on a batch (rows of X are inputs); returns the n
// scalar outputs. X must have input_dim() columns; n = 0 is allowed.
Vector forward(const Network& net, const Matrix& X);

// Pre-activation outputs of layer ell (after its affine map, before eta),
// n x width(ell+1). 1 <= ell <= depth().
Matrix layer_preactivations(const Network& net, const Matrix& X, int ell);

// Post-activation outputs eta(F_ell(x)), n x width(ell+1).
// 1 <= ell <= depth() - 1: the last layer has no activation.
Matrix layer_activations(const Network& net, const Matrix& X, int ell);

struct LayerNorms {
  double w_fro;   // Frobenius norm of W
  double b_norm;  // l2 norm of b
};
std::vector<LayerNorms> param_norms(const Network& net);

// Moves scale between adjacent layers: W^(ell) -> c W^(ell), b^(ell) ->
// c b^(ell), W^(ell+1) -> W^(ell+1) / c. For positively homogeneous eta and
// c > 0 the network function is unchanged. The applied factor is c snapped to
// the nearest power of two so the rescaling is exact in floating point and the
// moved network evaluates bit-identically. 1 <= ell <= depth() - 1.
Network reparameterize(const Network& net, int ell, double c);

// Closed-form sup-norm cap R_bar^L D_x + sum_{l=1..L} R_bar^{L-l} R_bar_b for
// depth-L networks under the budget. Valid for inputs with ||x||_2 <= D_x
// (for d_x = 1 that is the interval [-D_x, D_x]).
double sup_norm_bound(int depth, const NormBudget& budget);
double sup_norm_bound(const Network& net, const NormBudget& budget);

// ---------------------------------------------------------------------------
// Synthetic teachers. All teachers are rescaled after generation so that the
// per-row feature norms satisfy sqrt(m_l) * ||W_row|| <= R = 1 (with m_1 =
// d_x) and biases satisfy |b_i| <= R_b = 1; finite_dim teachers additionally
// keep ||b||_2 <= 1 so they sit inside the hypothesis class as-is. Teachers
// are calibrated for inputs drawn from [-1, 1]^{d_x}.
// ---------------------------------------------------------------------------

struct TeacherSpec {
  std::string kind;       // "finite_dim" | "poly_decay" | "kernel_two_layer"
  std::vector<int> dims;  // finite_dim only: full chain {d_x, m_2, ..., 1}
  int d_x = 24;           // two-layer kinds
  int m_ref = 512;        // two-layer kinds: first-layer width
  double a = 1.0;         // poly_decay: target spectral amplitude (shape only;
                          // the realized amplitude is set by the R = 1 rescale)
  double s = 0.5;         // poly_decay: target eigendecay mu_j ~ j^{-1/s}
  std::string mix = "half_normal";  // poly_decay second layer: "half_normal"
                                    // or "decay" (signed j^{-1} profile)
  uint64_t seed = 0;
};

Network make_teacher(const TeacherSpec& spec);

// convenience wrappers
Network make_finite_dim_teacher(const std::vector<int>& dims, uint64_t seed);
Network make_poly_decay_teacher(double a, double s, int d_x, int m_ref, uint64_t seed,
                                const std::string& mix = "half_normal");
Network make_kernel_two_layer_teacher(int d_x, int m_ref, uint64_t seed);

}  // namespace netkernel
