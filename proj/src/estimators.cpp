#include "netkernel/estimators.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "netkernel/bounds.hpp"
#include "netkernel/spectral.hpp"

namespace netkernel {

namespace {

constexpr uint64_t kDataTag = 0x64617461;   // per-cell data stream
constexpr uint64_t kFitTag = 0x666974;      // per-cell fit stream
constexpr uint64_t kEvalTag = 0x6576616c;   // per-cell evaluation stream
constexpr uint64_t kProbeTag = 0x70726f62;  // sweep-level probe stream

Matrix uniform_inputs(int n, int d, double D_x, Rng& rng) {
  Matrix X(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) X(i, j) = rng.uniform(-D_x, D_x);
  return X;
}

void check_widths(const std::vector<int>& widths) {
  if (widths.size() < 2)
    throw std::invalid_argument("widths: need the full chain (d_x, ..., 1)");
  for (int w : widths)
    if (w < 1) throw std::invalid_argument("widths: entries must be >= 1");
  if (widths.back() != 1)
    throw std::invalid_argument("widths: output width must be 1");
}

// uniform draw from the l2 ball of radius r in dimension dim, written into a
// flat span of the parameter vector
void fill_ball(double* out, int dim, double r, Rng& rng) {
  double sq = 0.0;
  for (int i = 0; i < dim; ++i) {
    out[i] = rng.normal();
    sq += out[i] * out[i];
  }
  const double norm = std::sqrt(sq);
  const double radius =
      r * std::pow(rng.uniform01(), 1.0 / static_cast<double>(dim));
  const double scale = norm > 0.0 ? radius / norm : 0.0;
  for (int i = 0; i < dim; ++i) out[i] *= scale;
}

struct Shapes {
  std::vector<int> widths;  // full chain
  int total = 0;            // concatenated parameter count

  explicit Shapes(const std::vector<int>& w) : widths(w) {
    for (size_t l = 0; l + 1 < w.size(); ++l)
      total += w[l + 1] * w[l] + w[l + 1];
  }
  int depth() const { return static_cast<int>(widths.size()) - 1; }
};

Network unpack(const Shapes& sh, const Vector& theta, Activation act) {
  Network net;
  net.activation = act;
  int off = 0;
  for (int l = 0; l < sh.depth(); ++l) {
    const int rows = sh.widths[static_cast<size_t>(l + 1)];
    const int cols = sh.widths[static_cast<size_t>(l)];
    Layer lay;
    lay.W = Eigen::Map<const Matrix>(theta.data() + off, rows, cols);
    off += rows * cols;
    lay.b = Eigen::Map<const Vector>(theta.data() + off, rows);
    off += rows;
    net.layers.push_back(std::move(lay));
  }
  return net;
}

Vector pack(const Network& net) {
  int total = 0;
  for (const Layer& l : net.layers)
    total += static_cast<int>(l.W.size() + l.b.size());
  Vector theta(total);
  int off = 0;
  for (const Layer& l : net.layers) {
    Eigen::Map<Matrix>(theta.data() + off, l.W.rows(), l.W.cols()) = l.W;
    off += static_cast<int>(l.W.size());
    Eigen::Map<Vector>(theta.data() + off, l.b.size()) = l.b;
    off += static_cast<int>(l.b.size());
  }
  return theta;
}

// in-place projection of a packed parameter vector onto the class
void project_packed(const Shapes& sh, Vector& theta, const NormBudget& budget) {
  const double rw = budget.R_bar();
  const double rb = budget.R_bar_b();
  int off = 0;
  for (int l = 0; l < sh.depth(); ++l) {
    const int nw = sh.widths[static_cast<size_t>(l + 1)] *
                   sh.widths[static_cast<size_t>(l)];
    const int nb = sh.widths[static_cast<size_t>(l + 1)];
    auto wseg = theta.segment(off, nw);
    const double wn = wseg.norm();
    if (wn > rw) wseg *= rw / wn;
    off += nw;
    auto bseg = theta.segment(off, nb);
    const double bn = bseg.norm();
    if (bn > rb) bseg *= rb / bn;
    off += nb;
  }
}

bool in_support(const Shapes& sh, const Vector& theta, const NormBudget& budget) {
  const double rw = budget.R_bar();
  const double rb = budget.R_bar_b();
  int off = 0;
  for (int l = 0; l < sh.depth(); ++l) {
    const int nw = sh.widths[static_cast<size_t>(l + 1)] *
                   sh.widths[static_cast<size_t>(l)];
    const int nb = sh.widths[static_cast<size_t>(l + 1)];
    if (theta.segment(off, nw).norm() > rw) return false;
    off += nw;
    if (theta.segment(off, nb).norm() > rb) return false;
    off += nb;
  }
  return true;
}

// forward pass caching pre- and post-activations per layer; theta packed
struct ForwardCache {
  std::vector<Matrix> Z;  // pre-activations, one per layer
  std::vector<Matrix> A;  // post-activations; A[0] is the input
  Vector pred;
};

void forward_cached(const Shapes& sh, const Vector& theta, const Matrix& X,
                    Activation act, ForwardCache& fc) {
  const int L = sh.depth();
  fc.Z.resize(static_cast<size_t>(L));
  fc.A.resize(static_cast<size_t>(L) + 1);
  fc.A[0] = X;
  int off = 0;
  for (int l = 0; l < L; ++l) {
    const int rows = sh.widths[static_cast<size_t>(l + 1)];
    const int cols = sh.widths[static_cast<size_t>(l)];
    const auto W = Eigen::Map<const Matrix>(theta.data() + off, rows, cols);
    off += rows * cols;
    const auto b = Eigen::Map<const Vector>(theta.data() + off, rows);
    off += rows;
    Matrix& Z = fc.Z[static_cast<size_t>(l)];
    Z.noalias() = fc.A[static_cast<size_t>(l)] * W.transpose();
    Z.rowwise() += b.transpose();
    if (l + 1 < L && act == Activation::kRelu)
      fc.A[static_cast<size_t>(l + 1)] = Z.cwiseMax(0.0);
    else
      fc.A[static_cast<size_t>(l + 1)] = Z;
  }
  fc.pred = fc.A[static_cast<size_t>(L)].col(0);
}

double packed_mse(const Shapes& sh, const Vector& theta, const Matrix& X,
                  const Vector& y, Activation act, ForwardCache& fc) {
  forward_cached(sh, theta, X, act, fc);
  return (fc.pred - y).squaredNorm() / static_cast<double>(X.rows());
}

// gradient of the mean squared loss w.r.t. the packed parameters
void packed_grad(const Shapes& sh, const Vector& theta, const Vector& y,
                 Activation act, ForwardCache& fc, Vector& grad) {
  const int L = sh.depth();
  const int n = static_cast<int>(y.size());
  grad.resize(sh.total);
  Matrix G = (fc.pred - y) * (2.0 / static_cast<double>(n));

  std::vector<int> w_off(static_cast<size_t>(L)), b_off(static_cast<size_t>(L));
  int off = 0;
  for (int l = 0; l < L; ++l) {
    w_off[static_cast<size_t>(l)] = off;
    off += sh.widths[static_cast<size_t>(l + 1)] * sh.widths[static_cast<size_t>(l)];
    b_off[static_cast<size_t>(l)] = off;
    off += sh.widths[static_cast<size_t>(l + 1)];
  }
  for (int l = L - 1; l >= 0; --l) {
    const int rows = sh.widths[static_cast<size_t>(l + 1)];
    const int cols = sh.widths[static_cast<size_t>(l)];
    Eigen::Map<Matrix>(grad.data() + w_off[static_cast<size_t>(l)], rows, cols)
        .noalias() = G.transpose() * fc.A[static_cast<size_t>(l)];
    Eigen::Map<Vector>(grad.data() + b_off[static_cast<size_t>(l)], rows) =
        G.colwise().sum().transpose();
    if (l > 0) {
      const auto W =
          Eigen::Map<const Matrix>(theta.data() + w_off[static_cast<size_t>(l)],
                                   rows, cols);
      Matrix Gprev = G * W;
      if (act == Activation::kRelu)
        Gprev.array() *=
            (fc.Z[static_cast<size_t>(l - 1)].array() > 0.0).cast<double>();
      G = std::move(Gprev);
    }
  }
}

int resolve_workers(int requested, int cells) {
  int w = requested;
  if (w <= 0) {
    if (const char* env = std::getenv("NETKERNEL_WORKERS")) {
      w = std::atoi(env);
    }
  }
  if (w <= 0) w = static_cast<int>(std::thread::hardware_concurrency());
  if (w <= 0) w = 1;
  return std::max(1, std::min(w, cells));
}

}  // namespace

Predictor predictor_of(const Network& net) {
  return [net](const Matrix& X) { return forward(net, X); };
}

Dataset gen_data(const Network& teacher, int n, double sigma, double D_x,
                 uint64_t seed) {
  validate(teacher);
  if (n < 0) throw std::invalid_argument("gen_data: n must be >= 0");
  if (!(sigma >= 0.0)) throw std::invalid_argument("gen_data: sigma must be >= 0");
  if (!(D_x > 0.0)) throw std::invalid_argument("gen_data: D_x must be positive");
  Rng rng(seed);
  Dataset data;
  data.X = uniform_inputs(n, teacher.input_dim(), D_x, rng);
  data.y = forward(teacher, data.X);
  for (int i = 0; i < n; ++i) data.y[i] += sigma * rng.normal();
  data.noise_sigma = sigma;
  return data;
}

Network project_to_class(const Network& net, const NormBudget& budget) {
  validate(net);
  validate(budget);
  Network out = net;
  const double rw = budget.R_bar();
  const double rb = budget.R_bar_b();
  for (Layer& lay : out.layers) {
    const double wn = lay.W.norm();
    if (wn > rw) lay.W *= rw / wn;
    const double bn = lay.b.norm();
    if (bn > rb) lay.b *= rb / bn;
  }
  return out;
}

Network sample_prior(const std::vector<int>& widths, const NormBudget& budget,
                     Activation activation, Rng& rng) {
  check_widths(widths);
  validate(budget);
  Network net;
  net.activation = activation;
  for (size_t l = 0; l + 1 < widths.size(); ++l) {
    const int rows = widths[l + 1];
    const int cols = widths[l];
    Layer lay;
    lay.W.resize(rows, cols);
    lay.b.resize(rows);
    fill_ball(lay.W.data(), rows * cols, budget.R_bar(), rng);
    fill_ball(lay.b.data(), rows, budget.R_bar_b(), rng);
    net.layers.push_back(std::move(lay));
  }
  return net;
}

ErmResult erm_fit(const Dataset& data, const std::vector<int>& widths,
                  const NormBudget& budget, const ErmConfig& cfg,
                  Activation activation) {
  check_widths(widths);
  validate(budget);
  if (data.X.cols() != widths.front())
    throw std::invalid_argument("erm_fit: widths chain must start at d_x");
  if (data.X.rows() != data.y.size() || data.X.rows() < 1)
    throw std::invalid_argument("erm_fit: empty or inconsistent data");
  if (cfg.epochs < 1 || cfg.restarts < 1)
    throw std::invalid_argument("erm_fit: epochs and restarts must be >= 1");

  const Shapes sh(widths);
  ForwardCache fc;
  Vector grad;

  double best_loss = std::numeric_limits<double>::infinity();
  Vector best_theta;
  int best_restart = -1;
  int diverged = 0;

  for (int r = 0; r < cfg.restarts; ++r) {
    Rng rng(derive_stream(cfg.seed, {static_cast<uint64_t>(r)}));
    // scaled Gaussian start: weights at 1/sqrt(fan-in), hidden biases at 0.3,
    // zero output bias
    Vector theta(sh.total);
    {
      int off = 0;
      for (int l = 0; l < sh.depth(); ++l) {
        const int rows = sh.widths[static_cast<size_t>(l + 1)];
        const int cols = sh.widths[static_cast<size_t>(l)];
        const double wscale = 1.0 / std::sqrt(static_cast<double>(cols));
        for (int i = 0; i < rows * cols; ++i) theta[off + i] = wscale * rng.normal();
        off += rows * cols;
        const bool last = l + 1 == sh.depth();
        for (int i = 0; i < rows; ++i) theta[off + i] = last ? 0.0 : 0.3 * rng.normal();
        off += rows;
      }
    }
    project_packed(sh, theta, budget);

    double loss = packed_mse(sh, theta, data.X, data.y, activation, fc);
    if (!std::isfinite(loss)) {
      ++diverged;
      continue;
    }
    double lr = cfg.learning_rate;
    int stall = 0;
    for (int ep = 0; ep < cfg.epochs; ++ep) {
      forward_cached(sh, theta, data.X, activation, fc);
      packed_grad(sh, theta, data.y, activation, fc, grad);
      Vector cand;
      double cand_loss = loss;
      bool accepted = false;
      for (int bt = 0; bt < cfg.max_backtracks; ++bt) {
        cand = theta - lr * grad;
        project_packed(sh, cand, budget);
        cand_loss = packed_mse(sh, cand, data.X, data.y, activation, fc);
        if (std::isfinite(cand_loss) && cand_loss <= loss) {
          accepted = true;
          break;
        }
        lr *= 0.5;
      }
      if (!accepted) break;
      if (loss - cand_loss < cfg.stall_rtol * std::max(loss, 1e-300))
        ++stall;
      else
        stall = 0;
      theta = std::move(cand);
      loss = cand_loss;
      lr *= 1.2;
      if (stall > cfg.stall_limit) break;
    }
    if (loss < best_loss) {
      best_loss = loss;
      best_theta = theta;
      best_restart = r;
    }
  }
  if (best_restart < 0)
    throw std::runtime_error("erm_fit: every restart diverged");

  ErmResult res;
  res.net = unpack(sh, best_theta, activation);
  res.train_mse = best_loss;
  res.best_restart = best_restart;
  res.diverged_restarts = diverged;
  return res;
}

BayesResult bayes_fit(const Dataset& data, const std::vector<int>& widths,
                      const NormBudget& budget, const BayesConfig& cfg,
                      Activation activation) {
  check_widths(widths);
  validate(budget);
  if (!(cfg.sigma > 0.0)) throw std::invalid_argument("bayes_fit: sigma must be > 0");
  if (cfg.chain_length <= cfg.burn_in || cfg.burn_in < 0)
    throw std::invalid_argument("bayes_fit: need chain_length > burn_in >= 0");
  if (cfg.thinning < 1) throw std::invalid_argument("bayes_fit: thinning must be >= 1");
  if (!(cfg.proposal_std > 0.0))
    throw std::invalid_argument("bayes_fit: proposal_std must be > 0");
  if (data.X.rows() != data.y.size())
    throw std::invalid_argument("bayes_fit: inconsistent data");
  if (data.X.rows() > 0 && data.X.cols() != widths.front())
    throw std::invalid_argument("bayes_fit: widths chain must start at d_x");

  const Shapes sh(widths);
  const bool have_data = data.X.rows() > 0;
  ForwardCache fc;
  const double inv_two_sigma2 = 0.5 / (cfg.sigma * cfg.sigma);

  const auto log_like = [&](const Vector& theta) {
    if (!have_data) return 0.0;
    forward_cached(sh, theta, data.X, activation, fc);
    return -(fc.pred - data.y).squaredNorm() * inv_two_sigma2;
  };

  Rng rng(cfg.seed);
  Network init = sample_prior(widths, budget, activation, rng);
  Vector theta = pack(init);
  double ll = log_like(theta);

  double step = cfg.proposal_std;
  constexpr int kWindow = 100;
  int window_accepts = 0;
  int frozen_accepts = 0;
  int frozen_steps = 0;

  auto samples = std::make_shared<std::vector<Network>>();
  Vector prop(sh.total);

  for (int t = 1; t <= cfg.chain_length; ++t) {
    for (int i = 0; i < sh.total; ++i) prop[i] = theta[i] + step * rng.normal();
    bool accept = false;
    if (in_support(sh, prop, budget)) {
      const double ll_prop = log_like(prop);
      const double log_alpha = ll_prop - ll;
      if (log_alpha >= 0.0 || std::log(rng.uniform01() + 1e-300) < log_alpha) {
        theta = prop;
        ll = ll_prop;
        accept = true;
      }
    }
    if (t <= cfg.burn_in) {
      if (accept) ++window_accepts;
      if (t % kWindow == 0) {
        const double rate = static_cast<double>(window_accepts) / kWindow;
        step *= std::exp(rate - 0.25);
        window_accepts = 0;
      }
    } else {
      ++frozen_steps;
      if (accept) ++frozen_accepts;
      if ((t - cfg.burn_in - 1) % cfg.thinning == 0)
        samples->push_back(unpack(sh, theta, activation));
    }
  }

  BayesResult res;
  res.samples = samples;
  res.acceptance_rate =
      frozen_steps > 0 ? static_cast<double>(frozen_accepts) / frozen_steps : 0.0;
  res.proposal_std_final = step;
  res.flagged = res.acceptance_rate < 0.01 || res.acceptance_rate > 0.99;
  res.mean_predictor = [samples](const Matrix& X) {
    Vector acc = Vector::Zero(X.rows());
    for (const Network& net : *samples) acc += forward(net, X);
    return Vector(acc / static_cast<double>(samples->size()));
  };
  return res;
}

L2Error l2_error(const Predictor& f_hat, const Network& teacher, int n_test,
                 double D_x, uint64_t seed) {
  validate(teacher);
  if (n_test < 1) throw std::invalid_argument("l2_error: n_test must be >= 1");
  Rng rng(seed);
  const Matrix X = uniform_inputs(n_test, teacher.input_dim(), D_x, rng);
  const Vector diff = f_hat(X) - forward(teacher, X);
  const Vector sq = diff.array().square();
  L2Error out;
  out.value = sq.mean();
  if (n_test > 1) {
    const double var =
        (sq.array() - out.value).square().sum() / static_cast<double>(n_test - 1);
    out.stderr_ = std::sqrt(var / static_cast<double>(n_test));
  }
  return out;
}

double contraction_mass(const std::vector<Network>& samples, const Network& teacher,
                        double radius, int n_test, double D_x, uint64_t seed) {
  validate(teacher);
  if (samples.empty())
    throw std::invalid_argument("contraction_mass: need at least one sample");
  if (n_test < 1) throw std::invalid_argument("contraction_mass: n_test must be >= 1");
  Rng rng(seed);
  const Matrix X = uniform_inputs(n_test, teacher.input_dim(), D_x, rng);
  const Vector y0 = forward(teacher, X);
  int outside = 0;
  for (const Network& net : samples) {
    const double dist =
        std::sqrt((forward(net, X) - y0).squaredNorm() / static_cast<double>(n_test));
    if (dist >= radius) ++outside;
  }
  return static_cast<double>(outside) / static_cast<double>(samples.size());
}

RateFit fit_rate(const std::vector<int>& n_grid,
                 const std::vector<double>& mean_errors) {
  if (n_grid.size() != mean_errors.size() || n_grid.size() < 2)
    throw std::invalid_argument("fit_rate: need matching grids with >= 2 points");
  const int k = static_cast<int>(n_grid.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (int i = 0; i < k; ++i) {
    if (n_grid[static_cast<size_t>(i)] < 2 ||
        (i > 0 && n_grid[static_cast<size_t>(i)] <= n_grid[static_cast<size_t>(i - 1)]))
      throw std::invalid_argument("fit_rate: n_grid must be strictly increasing");
    if (!(mean_errors[static_cast<size_t>(i)] > 0.0))
      throw std::invalid_argument("fit_rate: errors must be positive");
    const double x = std::log(static_cast<double>(n_grid[static_cast<size_t>(i)]));
    const double y = std::log(mean_errors[static_cast<size_t>(i)]);
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double denom = k * sxx - sx * sx;
  RateFit fit;
  fit.n_grid = n_grid;
  fit.mean_errors = mean_errors;
  fit.slope = (k * sxy - sx * sy) / denom;
  const double intercept = (sy - fit.slope * sx) / k;
  if (k > 2) {
    double rss = 0.0;
    for (int i = 0; i < k; ++i) {
      const double x = std::log(static_cast<double>(n_grid[static_cast<size_t>(i)]));
      const double y = std::log(mean_errors[static_cast<size_t>(i)]);
      const double r = y - (intercept + fit.slope * x);
      rss += r * r;
    }
    fit.slope_stderr = std::sqrt(rss / (k - 2) / (sxx - sx * sx / k));
  }
  return fit;
}

RateFit rate_sweep(const Network& teacher, const SweepConfig& cfg) {
  validate(teacher);
  if (cfg.n_grid.size() < 5)
    throw std::invalid_argument("rate_sweep: need >= 5 grid points");
  for (size_t i = 1; i < cfg.n_grid.size(); ++i)
    if (cfg.n_grid[i] <= cfg.n_grid[i - 1])
      throw std::invalid_argument("rate_sweep: n_grid must be strictly increasing");
  if (cfg.seeds < 3) throw std::invalid_argument("rate_sweep: need >= 3 seeds");
  if (cfg.widths_rule == WidthsRule::kFixed) check_widths(cfg.fixed_widths);

  const int d_x = teacher.input_dim();
  const int L = teacher.depth();

  // probe draws fix the noise level and the null-predictor error floor
  Rng probe_rng(derive_stream(cfg.master_seed, {kProbeTag}));
  const Matrix X_probe = uniform_inputs(3000, d_x, cfg.D_x, probe_rng);
  const Vector f_probe = forward(teacher, X_probe);
  const double f_mean = f_probe.mean();
  const double f_var = (f_probe.array() - f_mean).square().mean();
  const double null_mse = f_probe.array().square().mean();
  double sigma = cfg.sigma;
  if (sigma < 0.0) sigma = cfg.sigma_mult * std::sqrt(f_var);

  // per-layer spectra for the balanced-widths rule, measured once
  std::vector<Spectrum> spectra;
  if (cfg.widths_rule == WidthsRule::kBalanced)
    for (int ell = 2; ell <= L; ++ell)
      spectra.push_back(layer_spectrum(teacher, X_probe, ell - 1));

  const auto widths_for = [&](int n) {
    if (cfg.widths_rule == WidthsRule::kFixed) return cfg.fixed_widths;
    std::vector<int> chain;
    chain.push_back(d_x);
    const NormBudget budget;  // widths planning uses the default confidence
    for (int ell = 2; ell <= L; ++ell) {
      const ParamFactor factor =
          L == 2 ? two_layer_factor(d_x) : square_factor();
      const BalanceResult bal = balance_lambda(
          n, spectra[static_cast<size_t>(ell - 2)], budget.delta, factor);
      chain.push_back(bal.m);
    }
    chain.push_back(1);
    return chain;
  };

  const int n_points = static_cast<int>(cfg.n_grid.size());
  const int cells = n_points * cfg.seeds;
  RateFit fit;
  fit.cells.resize(static_cast<size_t>(cells));

  std::vector<std::vector<int>> widths_per_n(static_cast<size_t>(n_points));
  for (int i = 0; i < n_points; ++i)
    widths_per_n[static_cast<size_t>(i)] = widths_for(cfg.n_grid[static_cast<size_t>(i)]);

  std::atomic<int> next_cell{0};
  std::atomic<bool> failed{false};
  std::string fail_msg;
  std::mutex fail_mutex;

  const auto run_cell = [&](int idx) {
    const int ni = idx / cfg.seeds;
    const int si = idx % cfg.seeds;
    const int n = cfg.n_grid[static_cast<size_t>(ni)];
    const std::vector<int>& widths = widths_per_n[static_cast<size_t>(ni)];
    SweepCell& cell = fit.cells[static_cast<size_t>(idx)];
    cell.n = n;
    cell.seed_index = si;
    cell.widths = widths;

    const uint64_t tag_n = static_cast<uint64_t>(n);
    const uint64_t tag_s = static_cast<uint64_t>(si);
    const Dataset data = gen_data(teacher, n, sigma, cfg.D_x,
                                  derive_stream(cfg.master_seed, {kDataTag, tag_n, tag_s}));
    const NormBudget budget;
    Predictor f_hat;
    if (cfg.estimator == EstimatorKind::kErm) {
      ErmConfig ecfg = cfg.erm;
      ecfg.seed = derive_stream(cfg.master_seed, {kFitTag, tag_n, tag_s});
      const ErmResult erm = erm_fit(data, widths, budget, ecfg, teacher.activation);
      f_hat = predictor_of(erm.net);
    } else {
      BayesConfig bcfg = cfg.bayes;
      bcfg.sigma = std::max(sigma, 1e-3);
      bcfg.seed = derive_stream(cfg.master_seed, {kFitTag, tag_n, tag_s});
      const BayesResult bayes = bayes_fit(data, widths, budget, bcfg, teacher.activation);
      f_hat = bayes.mean_predictor;
    }
    const L2Error err = l2_error(f_hat, teacher, cfg.n_test, cfg.D_x,
                                 derive_stream(cfg.master_seed, {kEvalTag, tag_n, tag_s}));
    cell.mse = err.value;
    cell.stderr_ = err.stderr_;
  };

  const int workers = resolve_workers(cfg.workers, cells);
  if (workers == 1) {
    for (int i = 0; i < cells; ++i) run_cell(i);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        while (true) {
          const int idx = next_cell.fetch_add(1);
          if (idx >= cells || failed.load()) break;
          try {
            run_cell(idx);
          } catch (const std::exception& e) {
            std::lock_guard<std::mutex> lock(fail_mutex);
            failed.store(true);
            if (fail_msg.empty()) fail_msg = e.what();
          }
        }
      });
    }
    for (std::thread& t : pool) t.join();
    if (failed.load()) throw std::runtime_error("rate_sweep: cell failed: " + fail_msg);
  }

  fit.n_grid = cfg.n_grid;
  fit.mean_errors.assign(static_cast<size_t>(n_points), 0.0);
  for (int i = 0; i < n_points; ++i) {
    double acc = 0.0;
    for (int s = 0; s < cfg.seeds; ++s)
      acc += fit.cells[static_cast<size_t>(i * cfg.seeds + s)].mse;
    fit.mean_errors[static_cast<size_t>(i)] = acc / cfg.seeds;
  }

  // drop the smallest n when it saturates at the null-predictor level: a point
  // pinned at the trivial-error ceiling carries no rate information
  std::vector<int> ns = cfg.n_grid;
  std::vector<double> errs = fit.mean_errors;
  if (errs.front() >= 0.6 * null_mse && ns.size() > 2) {
    ns.erase(ns.begin());
    errs.erase(errs.begin());
    fit.dropped_first = true;
  }
  const RateFit line = fit_rate(ns, errs);
  fit.slope = line.slope;
  fit.slope_stderr = line.slope_stderr;
  return fit;
}

}  // namespace netkernel
