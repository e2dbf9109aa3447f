#pragma once

#include "netkernel/network.hpp"

namespace netkernel {

// Eigenvalues of the empirical layer operator T_hat = Phi^T Phi / n, sorted
// descending, plus where they came from.
struct Spectrum {
  Vector mu;           // descending, nonnegative
  int layer = 0;       // 1-based layer whose output features formed Phi (0 = synthetic)
  int n = 0;           // sample count behind the estimate (0 = exact/synthetic)
  int m = 0;           // feature count (0 = synthetic)
  int clamped = 0;     // tiny negative eigenvalues clamped to zero
};

// Scaled feature matrix Phi_{ij} = eta(F_ell(x_i, v_j)) / sqrt(m) for the
// m nodes of layer ell's output. The layer-(ell+1) kernel matrix is
// K = Phi Phi^T. 1 <= ell <= L-1.
Matrix feature_matrix(const Network& net, const Matrix& X, int ell);

struct EighResult {
  Vector eigenvalues;   // descending
  Matrix eigenvectors;  // columns match eigenvalues
  int sweeps = 0;
  int clamped = 0;      // negatives in [-1e-10 * mu_1, 0] zeroed
};

// Symmetric PSD eigendecomposition. Cyclic Jacobi up to 512 x 512 (relative
// off-diagonal tolerance 1e-12, at most 100 sweeps); larger problems fall
// back to a tridiagonalization-based solver. Throws std::invalid_argument on
// non-symmetric input (1e-10 relative), std::runtime_error on non-convergence
// or a significantly negative eigenvalue.
EighResult eigh_psd(const Matrix& M);

// Spectrum of the layer operator, via the smaller of Phi^T Phi / n (feature
// side) and Phi Phi^T / n (sample side); the nonzero eigenvalues agree.
Spectrum layer_spectrum(const Network& net, const Matrix& X, int ell);

// Spectrum from an explicit PSD operator matrix (already scaled by 1/n if it
// came from data).
Spectrum spectrum_of_operator(const Matrix& T_hat);

// Degree of freedom N(lambda) = sum_j mu_j / (mu_j + lambda). lambda > 0.
double dof(const Spectrum& spec, double lambda);

struct DofCurve {
  std::vector<double> lambda;
  std::vector<double> value;
};

// N(lambda) on a grid (any positive lambdas, evaluated in the given order).
DofCurve dof_curve(const Spectrum& spec, const std::vector<double>& lambdas);

// Log-spaced default grid [mu_min_positive / 10, 10 * mu_1] for reports.
std::vector<double> default_lambda_grid(const Spectrum& spec, int points = 25);

struct LeverageScores {
  Vector q;            // normalized sampling distribution over the m nodes
  Vector raw;          // diag[T_hat (T_hat + lambda I)^{-1}]; sums to N(lambda)
  bool degenerate = false;  // all-zero operator; q fell back to uniform
};

// Ridge leverage scores of the columns of Phi at level lambda.
LeverageScores leverage_scores(const Matrix& Phi, double lambda);

struct DecayFit {
  double a = 0.0;        // envelope amplitude: smallest a with mu_j <= a j^{-1/s}
                         // over the fitted range
  double s = 0.5;        // clipped to [0.01, 0.99]
  double residual = 0.0; // rms log deviation from the fitted line
  int fitted = 0;        // number of leading indices used
  bool clipped = false;
  bool finite_rank = false;  // hard zero tail with a flat head; s pinned low
};

// Envelope fit mu_j <= a j^{-1/s}: least-squares slope on (log j, log mu_j)
// over the significant head of the spectrum, then the smallest envelope
// amplitude for that slope. Needs >= 8 nonzero eigenvalues.
DecayFit fit_decay(const Spectrum& spec);

}  // namespace netkernel
