#include "netkernel/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace netkernel {

Matrix feature_matrix(const Network& net, const Matrix& X, int ell) {
  Matrix A = layer_activations(net, X, ell);
  return A / std::sqrt(static_cast<double>(A.cols()));
}

namespace {

// One cyclic sweep of two-sided Jacobi rotations. Classic textbook scheme:
// for each (p, q) annihilate A_pq, accumulating the rotations into V.
void jacobi_sweep(Matrix& A, Matrix& V) {
  const Eigen::Index n = A.rows();
  for (Eigen::Index p = 0; p < n - 1; ++p) {
    for (Eigen::Index q = p + 1; q < n; ++q) {
      const double apq = A(p, q);
      if (apq == 0.0) continue;
      const double app = A(p, p), aqq = A(q, q);
      const double tau = (aqq - app) / (2.0 * apq);
      const double t = (tau >= 0.0 ? 1.0 : -1.0) / (std::abs(tau) + std::sqrt(1.0 + tau * tau));
      const double c = 1.0 / std::sqrt(1.0 + t * t);
      const double s = t * c;
      // A <- J^T A J restricted to rows/cols p, q
      Vector rowp = A.row(p), rowq = A.row(q);
      A.row(p) = c * rowp - s * rowq;
      A.row(q) = s * rowp + c * rowq;
      Vector colp = A.col(p), colq = A.col(q);
      A.col(p) = c * colp - s * colq;
      A.col(q) = s * colp + c * colq;
      A(p, q) = 0.0;
      A(q, p) = 0.0;
      A(p, p) = app - t * apq;
      A(q, q) = aqq + t * apq;
      colp = V.col(p);
      colq = V.col(q);
      V.col(p) = c * colp - s * colq;
      V.col(q) = s * colp + c * colq;
    }
  }
}

double offdiag_norm(const Matrix& A) {
  double acc = 0.0;
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = i + 1; j < A.cols(); ++j) acc += 2.0 * A(i, j) * A(i, j);
  return std::sqrt(acc);
}

void sort_desc(Vector& vals, Matrix& vecs) {
  std::vector<Eigen::Index> order(vals.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](Eigen::Index i, Eigen::Index j) { return vals(i) > vals(j); });
  Vector v2(vals.size());
  Matrix m2(vecs.rows(), vecs.cols());
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    v2(i) = vals(order[i]);
    m2.col(i) = vecs.col(order[i]);
  }
  vals = std::move(v2);
  vecs = std::move(m2);
}

int clamp_small_negatives(Vector& vals) {
  if (vals.size() == 0) return 0;
  const double mu1 = std::max(vals(0), 0.0);
  const double tol = 1e-10 * std::max(mu1, 1e-300);
  int clamped = 0;
  for (Eigen::Index i = 0; i < vals.size(); ++i) {
    if (vals(i) < 0.0) {
      if (vals(i) < -tol)
        throw std::runtime_error("eigh_psd: input is not positive semidefinite");
      vals(i) = 0.0;
      ++clamped;
    }
  }
  return clamped;
}

}  // namespace

EighResult eigh_psd(const Matrix& M) {
  if (M.rows() != M.cols()) throw std::invalid_argument("eigh_psd: matrix must be square");
  if (M.rows() == 0) throw std::invalid_argument("eigh_psd: empty matrix");
  const double scale = M.norm();
  if (scale > 0.0 && (M - M.transpose()).norm() > 1e-10 * scale)
    throw std::invalid_argument("eigh_psd: matrix is not symmetric");

  EighResult out;
  const Eigen::Index n = M.rows();
  if (n > 512) {
    // beyond the dense Jacobi comfort zone; same contract, library backend
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (M + M.transpose()));
    if (es.info() != Eigen::Success) throw std::runtime_error("eigh_psd: solver failed");
    out.eigenvalues = es.eigenvalues();
    out.eigenvectors = es.eigenvectors();
    sort_desc(out.eigenvalues, out.eigenvectors);
    out.clamped = clamp_small_negatives(out.eigenvalues);
    return out;
  }

  Matrix A = 0.5 * (M + M.transpose());
  Matrix V = Matrix::Identity(n, n);
  if (scale == 0.0) {
    out.eigenvalues = Vector::Zero(n);
    out.eigenvectors = V;
    return out;
  }
  const double tol = 1e-12 * scale;
  int sweeps = 0;
  while (offdiag_norm(A) > tol) {
    if (++sweeps > 100) throw std::runtime_error("eigh_psd: Jacobi did not converge in 100 sweeps");
    jacobi_sweep(A, V);
  }
  out.sweeps = sweeps;
  out.eigenvalues = A.diagonal();
  out.eigenvectors = V;
  sort_desc(out.eigenvalues, out.eigenvectors);
  out.clamped = clamp_small_negatives(out.eigenvalues);
  return out;
}

Spectrum spectrum_of_operator(const Matrix& T_hat) {
  EighResult r = eigh_psd(T_hat);
  Spectrum spec;
  spec.mu = r.eigenvalues;
  spec.m = static_cast<int>(T_hat.rows());
  spec.clamped = r.clamped;
  return spec;
}

Spectrum layer_spectrum(const Network& net, const Matrix& X, int ell) {
  const Matrix Phi = feature_matrix(net, X, ell);
  const Eigen::Index n = Phi.rows(), m = Phi.cols();
  if (n == 0) throw std::invalid_argument("layer_spectrum: empty sample");
  Spectrum spec;
  if (m <= n) {
    Matrix T = (Phi.transpose() * Phi) / static_cast<double>(n);
    spec = spectrum_of_operator(T);
  } else {
    Matrix K = (Phi * Phi.transpose()) / static_cast<double>(n);
    spec = spectrum_of_operator(K);
  }
  spec.layer = ell;
  spec.n = static_cast<int>(n);
  spec.m = static_cast<int>(m);
  return spec;
}

double dof(const Spectrum& spec, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("dof: lambda must be positive");
  double acc = 0.0;
  for (Eigen::Index j = 0; j < spec.mu.size(); ++j) acc += spec.mu(j) / (spec.mu(j) + lambda);
  return acc;
}

DofCurve dof_curve(const Spectrum& spec, const std::vector<double>& lambdas) {
  DofCurve curve;
  curve.lambda = lambdas;
  curve.value.reserve(lambdas.size());
  for (double l : lambdas) curve.value.push_back(dof(spec, l));
  return curve;
}

std::vector<double> default_lambda_grid(const Spectrum& spec, int points) {
  if (points < 2) throw std::invalid_argument("default_lambda_grid: need >= 2 points");
  double mu1 = 0.0, mu_min = 0.0;
  for (Eigen::Index j = 0; j < spec.mu.size(); ++j) {
    if (spec.mu(j) <= 0.0) continue;
    mu1 = std::max(mu1, spec.mu(j));
    mu_min = (mu_min == 0.0) ? spec.mu(j) : std::min(mu_min, spec.mu(j));
  }
  if (mu1 == 0.0) {  // degenerate all-zero spectrum: fixed fallback grid
    mu1 = 1.0;
    mu_min = 1e-6;
  }
  const double lo = std::log(mu_min / 10.0), hi = std::log(10.0 * mu1);
  std::vector<double> grid(points);
  for (int i = 0; i < points; ++i)
    grid[i] = std::exp(lo + (hi - lo) * static_cast<double>(i) / (points - 1));
  return grid;
}

LeverageScores leverage_scores(const Matrix& Phi, double lambda) {
  if (!(lambda > 0.0)) throw std::invalid_argument("leverage_scores: lambda must be positive");
  const Eigen::Index n = Phi.rows(), m = Phi.cols();
  if (n == 0 || m == 0) throw std::invalid_argument("leverage_scores: empty feature matrix");
  Matrix T = (Phi.transpose() * Phi) / static_cast<double>(n);
  LeverageScores out;
  if (T.norm() == 0.0) {
    out.degenerate = true;
    out.raw = Vector::Zero(m);
    out.q = Vector::Constant(m, 1.0 / static_cast<double>(m));
    return out;
  }
  Matrix reg = T;
  reg.diagonal().array() += lambda;
  // scores_j = [T (T + lambda I)^{-1}]_{jj}; solve instead of inverting
  Matrix B = reg.ldlt().solve(T);
  out.raw = B.diagonal().cwiseMax(0.0);
  const double total = out.raw.sum();
  if (total <= 0.0) {
    out.degenerate = true;
    out.q = Vector::Constant(m, 1.0 / static_cast<double>(m));
  } else {
    out.q = out.raw / total;
  }
  return out;
}

DecayFit fit_decay(const Spectrum& spec) {
  const Eigen::Index total = spec.mu.size();
  if (total == 0) throw std::invalid_argument("fit_decay: empty spectrum");
  const double mu1 = spec.mu(0);
  if (!(mu1 > 0.0)) throw std::invalid_argument("fit_decay: spectrum is all zero");
  const double floor = mu1 * 1e-12;
  int k = 0;
  while (k < total && spec.mu(k) > floor) ++k;
  if (k < 8) throw std::invalid_argument("fit_decay: need at least 8 significant eigenvalues");

  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int j = 0; j < k; ++j) {
    const double x = std::log(static_cast<double>(j + 1));
    const double y = std::log(spec.mu(j));
    sx += x; sy += y; sxx += x * x; sxy += x * y;
  }
  const double denom = k * sxx - sx * sx;
  const double slope = (k * sxy - sx * sy) / denom;

  DecayFit fit;
  fit.fitted = k;
  const bool zero_tail = k < total;  // spectrum truncates to exact zeros
  if (zero_tail && slope > -1.0 / 8.0) {
    // flat head then a hard drop: a finite-rank operator, not a power law
    fit.finite_rank = true;
    fit.clipped = true;
    fit.s = 0.01;
    fit.fitted = 1;
    fit.a = mu1;
    fit.residual = 0.0;
    return fit;
  }

  double s_raw = (slope < 0.0) ? -1.0 / slope : 1e6;
  fit.s = std::clamp(s_raw, 0.01, 0.99);
  fit.clipped = fit.s != s_raw;

  // smallest envelope amplitude for the fitted exponent
  double a = 0.0;
  for (int j = 0; j < k; ++j)
    a = std::max(a, spec.mu(j) * std::pow(static_cast<double>(j + 1), 1.0 / fit.s));
  fit.a = a;

  double rss = 0.0;
  const double intercept = (sy - slope * sx) / k;
  for (int j = 0; j < k; ++j) {
    const double pred = intercept + slope * std::log(static_cast<double>(j + 1));
    const double dev = std::log(spec.mu(j)) - pred;
    rss += dev * dev;
  }
  fit.residual = std::sqrt(rss / k);
  return fit;
}

}  // namespace netkernel
