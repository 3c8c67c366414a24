#include "tsq/bridge.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <memory>
#include <ostream>
#include <sstream>

namespace tsq {

// ---- drift models

DriftModel DriftModel::from_hamiltonian(const ComplexPolynomial& h, const QuadratureFrame& frame) {
  require(frame.num_modes == h.num_modes(), ErrorKind::dimension, "frame and symbol mode counts differ");
  DriftModel m;
  m.n_ = h.num_modes();
  m.d_ = frame.d;
  m.constant_divergence_ = true;  // Hamiltonian flow
  const Mat rot = frame.rotation;
  auto field = std::make_shared<DriftField>(drift_field(h));
  m.field_ = [field, rot](const Vec& psi) -> Vec { return rot.transpose() * (*field)(rot * psi); };
  m.jac_ = [field, rot](const Vec& psi) -> Mat { return rot.transpose() * field->jacobian(rot * psi) * rot; };
  if (h.total_degree() <= 2) {
    m.affine_ = true;
    const Vec zero = Vec::Zero(2 * m.n_);
    m.m_ = m.jac_(zero);
    m.c_ = m.field_(zero);
  }
  return m;
}

DriftModel DriftModel::from_hamiltonian(const ComplexPolynomial& h) {
  return from_hamiltonian(h, diagonalize_diffusion(h));
}

DriftModel DriftModel::affine(const Mat& mat, const Vec& c, double d) {
  require(mat.rows() == mat.cols() && mat.rows() % 2 == 0 && c.size() == mat.rows(), ErrorKind::dimension,
          "affine drift needs a square even-dimensional matrix and matching offset");
  require(d >= 0.0, ErrorKind::config, "diffusion magnitude must be nonnegative");
  DriftModel m;
  m.n_ = static_cast<int>(mat.rows() / 2);
  m.d_ = d;
  m.affine_ = true;
  m.constant_divergence_ = true;  // divergence is the constant trace
  m.m_ = mat;
  m.c_ = c;
  m.field_ = [mat, c](const Vec& psi) -> Vec { return mat * psi + c; };
  m.jac_ = [mat](const Vec&) -> Mat { return mat; };
  return m;
}

DriftModel DriftModel::zero(int n, double d) { return affine(Mat::Zero(2 * n, 2 * n), Vec::Zero(2 * n), d); }

DriftModel DriftModel::custom(int n, double d, Field drift, Jacobian jacobian) {
  require(d >= 0.0, ErrorKind::config, "diffusion magnitude must be nonnegative");
  DriftModel m;
  m.n_ = n;
  m.d_ = d;
  m.field_ = std::move(drift);
  m.jac_ = std::move(jacobian);
  return m;
}

Vec DriftModel::drift(const Vec& psi) const { return field_(psi); }
Mat DriftModel::jacobian(const Vec& psi) const { return jac_(psi); }

Vec DriftModel::divergence_gradient(const Vec& psi) const {
  if (constant_divergence_) return Vec::Zero(psi.size());
  Vec g(psi.size());
  const double eps = 1e-5;
  for (Eigen::Index i = 0; i < psi.size(); ++i) {
    Vec a = psi, b = psi;
    a[i] += eps;
    b[i] -= eps;
    g[i] = (divergence(a) - divergence(b)) / (2 * eps);
  }
  return g;
}

DriftModel DriftModel::with_d(double d) const {
  require(d >= 0.0, ErrorKind::config, "diffusion magnitude must be nonnegative");
  DriftModel m = *this;
  m.d_ = d;
  return m;
}

DriftModel DriftModel::with_cubic(double eps) const {
  DriftModel base = *this;
  auto field = [base, eps](const Vec& psi) -> Vec { return base.drift(psi) - eps * psi.array().cube().matrix(); };
  auto jac = [base, eps](const Vec& psi) -> Mat {
    Mat j = base.jacobian(psi);
    j.diagonal() -= 3.0 * eps * psi.array().square().matrix();
    return j;
  };
  return custom(n_, d_, field, jac);
}

Vec BridgeBoundary::stacked() const {
  Vec u(x0.size() + yf.size());
  u << x0, yf;
  return u;
}

std::vector<double> uniform_times(double t0, double tf, int steps) {
  require(tf > t0, ErrorKind::config, "bridge needs t0 < tf");
  require(steps >= 2, ErrorKind::config, "bridge needs at least two steps");
  std::vector<double> t(steps + 1);
  for (int k = 0; k <= steps; ++k) t[k] = t0 + (tf - t0) * k / steps;
  return t;
}

DiscretePath make_path(const std::vector<double>& times, int dim) {
  return DiscretePath{times, Mat::Zero(dim, static_cast<Eigen::Index>(times.size()))};
}

// ---- action

namespace {

void check_path(const DiscretePath& path, const DriftModel& model) {
  require(path.values.rows() == model.dim(), ErrorKind::dimension, "path dimension does not match drift model");
  require(path.times.size() >= 2 && static_cast<Eigen::Index>(path.times.size()) == path.values.cols(),
          ErrorKind::dimension, "path times and values disagree");
  require(model.d() > 0.0, ErrorKind::degenerate_measure,
          "diffusion magnitude is zero; the path measure is degenerate (deterministic flow)");
}

double step_action(const DriftModel& model, const Vec& a, const Vec& b, double dt) {
  const Vec mid = 0.5 * (a + b);
  const Vec r = (b - a) / dt - model.drift(mid);
  return dt * (r.squaredNorm() / (2.0 * model.d()) + 0.5 * model.divergence(mid));
}

}  // namespace

double om_action_segment(const DiscretePath& path, const DriftModel& model, int k_begin, int k_end) {
  check_path(path, model);
  require(0 <= k_begin && k_begin <= k_end && k_end <= path.steps(), ErrorKind::dimension, "segment out of range");
  double s = 0.0;
  for (int k = k_begin; k < k_end; ++k)
    s += step_action(model, path.values.col(k), path.values.col(k + 1), path.times[k + 1] - path.times[k]);
  return s;
}

double om_action(const DiscretePath& path, const DriftModel& model) {
  return om_action_segment(path, model, 0, path.steps());
}

double om_action(const DiscretePath& path, const ComplexPolynomial& h, const QuadratureFrame& frame) {
  require(!frame.degenerate && frame.d > 0.0, ErrorKind::degenerate_measure,
          "frame has zero diffusion; the path measure is degenerate");
  return om_action(path, DriftModel::from_hamiltonian(h, frame));
}

Mat om_action_gradient(const DiscretePath& path, const DriftModel& model) {
  check_path(path, model);
  Mat g = Mat::Zero(path.values.rows(), path.values.cols());
  const double inv_d = 1.0 / model.d();
  for (int k = 0; k < path.steps(); ++k) {
    const double dt = path.times[k + 1] - path.times[k];
    const Vec a = path.values.col(k);
    const Vec b = path.values.col(k + 1);
    const Vec mid = 0.5 * (a + b);
    const Vec r = (b - a) / dt - model.drift(mid);
    const Vec jr = model.jacobian(mid).transpose() * r;
    const Vec dv = 0.25 * dt * model.divergence_gradient(mid);
    g.col(k) += inv_d * (-r - 0.5 * dt * jr) + dv;
    g.col(k + 1) += inv_d * (r - 0.5 * dt * jr) + dv;
  }
  return g;
}

// ---- free variables

int free_dimension(int n, int steps) { return 2 * n * steps; }

namespace {

// Position of path entry (k, c) inside z, or -1 when pinned.
int free_index(int n, int steps, int k, int c) {
  if (k == 0) return c < n ? -1 : c - n;
  if (k == steps) return c < n ? n + 2 * n * (steps - 1) + c : -1;
  return n + 2 * n * (k - 1) + c;
}

// Position of pinned entry (k, c) inside u = (x0, yf), or -1 when free.
int boundary_index(int n, int steps, int k, int c) {
  if (k == 0 && c < n) return c;
  if (k == steps && c >= n) return c;
  return -1;
}

}  // namespace

Vec pack_free(const DiscretePath& path) {
  const int dim = static_cast<int>(path.values.rows());
  const int n = dim / 2;
  const int steps = path.steps();
  Vec z(free_dimension(n, steps));
  for (int k = 0; k <= steps; ++k)
    for (int c = 0; c < dim; ++c) {
      const int i = free_index(n, steps, k, c);
      if (i >= 0) z[i] = path.values(c, k);
    }
  return z;
}

DiscretePath unpack_free(const Vec& z, const BridgeBoundary& b, const std::vector<double>& times, int n) {
  const int steps = static_cast<int>(times.size()) - 1;
  require(z.size() == free_dimension(n, steps), ErrorKind::dimension, "free vector has wrong length");
  require(b.x0.size() == n && b.yf.size() == n, ErrorKind::dimension, "boundary blocks do not match mode count");
  DiscretePath p = make_path(times, 2 * n);
  for (int k = 0; k <= steps; ++k)
    for (int c = 0; c < 2 * n; ++c) {
      const int i = free_index(n, steps, k, c);
      if (i >= 0)
        p.values(c, k) = z[i];
      else
        p.values(c, k) = (k == 0) ? b.x0[c] : b.yf[c - n];
    }
  return p;
}

Vec free_gradient(const Mat& g, int n) {
  const int steps = static_cast<int>(g.cols()) - 1;
  Vec z(free_dimension(n, steps));
  for (int k = 0; k <= steps; ++k)
    for (int c = 0; c < 2 * n; ++c) {
      const int i = free_index(n, steps, k, c);
      if (i >= 0) z[i] = g(c, k);
    }
  return z;
}

namespace {

Vec free_grad_at(const DriftModel& model, const BridgeBoundary& b, const std::vector<double>& times, const Vec& z) {
  return free_gradient(om_action_gradient(unpack_free(z, b, times, model.n()), model), model.n());
}

double action_at(const DriftModel& model, const BridgeBoundary& b, const std::vector<double>& times, const Vec& z) {
  return om_action(unpack_free(z, b, times, model.n()), model);
}

Mat free_hessian(const DriftModel& model, const BridgeBoundary& b, const std::vector<double>& times, const Vec& z) {
  const Eigen::Index m = z.size();
  Mat hess(m, m);
  if (model.is_affine()) {
    // gradient is affine in z, so unit differences are exact
    const Vec g0 = free_grad_at(model, b, times, z);
    for (Eigen::Index j = 0; j < m; ++j) {
      Vec zp = z;
      zp[j] += 1.0;
      hess.col(j) = free_grad_at(model, b, times, zp) - g0;
    }
  } else {
    for (Eigen::Index j = 0; j < m; ++j) {
      const double eps = 1e-5 * std::max(1.0, std::abs(z[j]));
      Vec zp = z, zm = z;
      zp[j] += eps;
      zm[j] -= eps;
      hess.col(j) = (free_grad_at(model, b, times, zp) - free_grad_at(model, b, times, zm)) / (2 * eps);
    }
  }
  return 0.5 * (hess + hess.transpose());
}

void check_boundary(const DriftModel& model, const BridgeBoundary& b, const std::vector<double>& times) {
  require(b.x0.size() == model.n() && b.yf.size() == model.n(), ErrorKind::dimension,
          "boundary blocks do not match the drift model");
  require(times.size() >= 3, ErrorKind::config, "bridge needs at least two steps");
  require(std::abs(times.front() - b.t0) < 1e-12 && std::abs(times.back() - b.tf) < 1e-12, ErrorKind::config,
          "time grid does not span [t0, tf]");
  require(model.d() > 0.0, ErrorKind::degenerate_measure,
          "diffusion magnitude is zero; the path measure is degenerate (deterministic flow)");
}

double min_eigenvalue(const Mat& m, Vec* vec = nullptr) {
  Eigen::SelfAdjointEigenSolver<Mat> es(m);
  if (vec) *vec = es.eigenvectors().col(0);
  return es.eigenvalues()[0];
}

}  // namespace

// ---- exact Gaussian bridge

GaussianBridge gaussian_bridge_exact(const DriftModel& model, const BridgeBoundary& boundary,
                                     const std::vector<double>& times) {
  require(model.is_affine(), ErrorKind::unsupported_hamiltonian, "exact Gaussian bridge requires an affine drift");
  check_boundary(model, boundary, times);
  const int n = model.n();
  const int steps = static_cast<int>(times.size()) - 1;
  const Vec z0 = Vec::Zero(free_dimension(n, steps));
  GaussianBridge gb;
  gb.n = n;
  gb.times = times;
  gb.boundary = boundary;
  gb.precision = free_hessian(model, boundary, times, z0);
  gb.linear = -free_grad_at(model, boundary, times, z0);

  const double scale = gb.precision.cwiseAbs().maxCoeff();
  const double lam = min_eigenvalue(gb.precision);
  if (!(lam > 1e-11 * scale))
    fail(ErrorKind::non_normalizable, "action Hessian has eigenvalue " + std::to_string(lam) +
                                          "; the bridge measure is not normalisable for this drift and interval");
  const Eigen::LLT<Mat> llt(gb.precision);
  require(llt.info() == Eigen::Success, ErrorKind::non_normalizable, "action Hessian is not positive definite");
  gb.mean = llt.solve(gb.linear);
  gb.covariance = llt.solve(Mat::Identity(gb.precision.rows(), gb.precision.cols()));

  // sensitivity of b to each pinned coordinate
  Mat lgain(z0.size(), 2 * n);
  for (int j = 0; j < 2 * n; ++j) {
    BridgeBoundary shifted = boundary;
    if (j < n)
      shifted.x0[j] += 1.0;
    else
      shifted.yf[j - n] += 1.0;
    lgain.col(j) = -free_grad_at(model, shifted, times, z0) - gb.linear;
  }
  gb.gain = llt.solve(lgain);
  return gb;
}

DiscretePath GaussianBridge::mean_path() const { return unpack_free(mean, boundary, times, n); }

Vec GaussianBridge::marginal_mean(int k) const { return mean_path().values.col(k); }

Mat GaussianBridge::cross_covariance(int j, int k) const {
  const int steps = static_cast<int>(times.size()) - 1;
  Mat c = Mat::Zero(2 * n, 2 * n);
  for (int a = 0; a < 2 * n; ++a)
    for (int b = 0; b < 2 * n; ++b) {
      const int ia = free_index(n, steps, j, a);
      const int ib = free_index(n, steps, k, b);
      if (ia >= 0 && ib >= 0) c(a, b) = covariance(ia, ib);
    }
  return c;
}

Mat GaussianBridge::marginal_covariance(int k) const { return cross_covariance(k, k); }

PathLaw gaussian_path_law(const DriftModel& model, const std::vector<double>& times, const Vec& boundary_mean,
                          const Mat& boundary_covariance) {
  const int n = model.n();
  require(boundary_mean.size() == 2 * n && boundary_covariance.rows() == 2 * n && boundary_covariance.cols() == 2 * n,
          ErrorKind::dimension, "boundary law must be over (x0, yf)");
  BridgeBoundary b{times.front(), times.back(), boundary_mean.head(n), boundary_mean.tail(n)};
  const GaussianBridge gb = gaussian_bridge_exact(model, b, times);
  const int steps = static_cast<int>(times.size()) - 1;
  const int total = 2 * n * (steps + 1);
  const int m = static_cast<int>(gb.mean.size());
  Mat embed = Mat::Zero(total, m);       // path <- z
  Mat affine = Mat::Zero(total, 2 * n);  // path <- u, through pins and the mean gain
  for (int k = 0; k <= steps; ++k)
    for (int c = 0; c < 2 * n; ++c) {
      const int row = k * 2 * n + c;
      const int i = free_index(n, steps, k, c);
      if (i >= 0) {
        embed(row, i) = 1.0;
        affine.row(row) = gb.gain.row(i);
      } else {
        affine(row, boundary_index(n, steps, k, c)) = 1.0;
      }
    }
  PathLaw law;
  law.n = n;
  law.times = times;
  const DiscretePath mp = gb.mean_path();
  law.mean = Eigen::Map<const Vec>(mp.values.data(), total);
  law.covariance = affine * boundary_covariance * affine.transpose() + embed * gb.covariance * embed.transpose();
  law.covariance = 0.5 * (law.covariance + law.covariance.transpose()).eval();
  return law;
}

// ---- minimiser

DiscretePath most_probable_path(const DriftModel& model, const BridgeBoundary& boundary,
                                const std::vector<double>& times, const NewtonOptions& opts,
                                const std::optional<Vec>& start) {
  check_boundary(model, boundary, times);
  const int n = model.n();
  const int steps = static_cast<int>(times.size()) - 1;
  Vec z;
  if (start) {
    require(start->size() == free_dimension(n, steps), ErrorKind::dimension, "start vector has wrong length");
    z = *start;
  } else {
    // constant continuation of the pinned data
    DiscretePath p = make_path(times, 2 * n);
    for (int k = 0; k <= steps; ++k) p.values.col(k) << boundary.x0, boundary.yf;
    z = pack_free(p);
  }
  double s = action_at(model, boundary, times, z);
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Vec g = free_grad_at(model, boundary, times, z);
    if (g.norm() < opts.gradient_tol) return unpack_free(z, boundary, times, n);
    Mat hess = free_hessian(model, boundary, times, z);
    double shift = 0.0;
    Eigen::LLT<Mat> llt(hess);
    while (llt.info() != Eigen::Success) {
      shift = shift == 0.0 ? 1e-8 * hess.diagonal().cwiseAbs().maxCoeff() : 10 * shift;
      llt.compute(hess + shift * Mat::Identity(hess.rows(), hess.cols()));
      if (shift > 1e12) fail(ErrorKind::optimization, "Newton system could not be regularised");
    }
    const Vec step = -llt.solve(g);
    double t = 1.0;
    bool moved = false;
    for (int ls = 0; ls < 40; ++ls) {
      const Vec trial = z + t * step;
      const double st = action_at(model, boundary, times, trial);
      if (std::isfinite(st) && st <= s + 1e-4 * t * g.dot(step) + 1e-12 * std::abs(s)) {
        z = trial;
        s = st;
        moved = true;
        break;
      }
      t *= 0.5;
    }
    if (!moved) {
      // line search stalls only at round-off level; accept the full step if it lowers the gradient
      const Vec trial = z + step;
      if (free_grad_at(model, boundary, times, trial).norm() < g.norm()) {
        z = trial;
        s = action_at(model, boundary, times, z);
      } else {
        break;
      }
    }
  }
  const Vec g = free_grad_at(model, boundary, times, z);
  if (g.norm() < opts.gradient_tol) return unpack_free(z, boundary, times, n);
  std::ostringstream msg;
  msg << "action minimisation did not converge; gradient norm " << g.norm() << " after " << opts.max_iterations
      << " iterations (last iterate retained)";
  fail(ErrorKind::optimization, msg.str());
}

// ---- sampler

double effective_sample_size(const Vec& chain) {
  const Eigen::Index n = chain.size();
  if (n < 4) return static_cast<double>(n);
  const Vec c = chain.array() - chain.mean();
  const double var = c.squaredNorm() / n;
  if (var <= 0.0) return static_cast<double>(n);
  auto rho = [&](Eigen::Index lag) { return c.head(n - lag).dot(c.tail(n - lag)) / (n * var); };
  double tau = -1.0;
  for (Eigen::Index m = 0; 2 * m + 1 < n; ++m) {
    const double pair = rho(2 * m) + rho(2 * m + 1);
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  tau = std::max(tau, 1.0 / static_cast<double>(n));
  return std::min(static_cast<double>(n), n / tau);
}

Mat BridgeEnsemble::slice(int k) const {
  const int dim = 2 * n;
  return samples.block(static_cast<Eigen::Index>(k) * dim, 0, dim, samples.cols());
}

DiscretePath BridgeEnsemble::path(int j) const {
  DiscretePath p = make_path(times, 2 * n);
  p.values = Eigen::Map<const Mat>(samples.col(j).data(), 2 * n, static_cast<Eigen::Index>(times.size()));
  return p;
}

BridgeEnsemble sample_bridges(const DriftModel& model, const BridgeBoundary& boundary,
                              const std::vector<double>& times, int n_paths, std::uint64_t seed,
                              const SamplerConfig& config) {
  check_boundary(model, boundary, times);
  require(n_paths >= 1 && config.chains >= 1 && config.thin >= 1 && config.warmup >= 0, ErrorKind::config,
          "sampler needs positive path count, chains and thinning");
  require(config.rho >= 0.0 && config.rho < 1.0, ErrorKind::config, "pCN persistence must lie in [0, 1)");
  const int n = model.n();
  const int steps = static_cast<int>(times.size()) - 1;
  const int dim = 2 * n;

  const Vec mode = pack_free(most_probable_path(model, boundary, times));
  const Mat hess = free_hessian(model, boundary, times, mode);
  Vec soft;
  const double lam = min_eigenvalue(hess, &soft);
  const double scale = hess.cwiseAbs().maxCoeff();
  if (!(lam > 1e-11 * scale))
    fail(ErrorKind::non_normalizable, "action Hessian at the minimiser has eigenvalue " + std::to_string(lam) +
                                          "; the path measure is not normalisable");
  const double s_mode = action_at(model, boundary, times, mode);
  if (!model.is_affine()) {
    // probe the softest direction far out; an action that keeps falling has no normaliser
    const double sigma = 1.0 / std::sqrt(lam);
    for (double mult : {3.0, 30.0, 300.0})
      for (double sign : {-1.0, 1.0}) {
        const double s = action_at(model, boundary, times, mode + sign * mult * sigma * soft);
        if (!std::isfinite(s) || s < s_mode - 50.0)
          fail(ErrorKind::non_normalizable, "action unbounded below along the softest Hessian direction");
      }
  }
  const Eigen::LLT<Mat> llt(hess);
  const Mat upper = llt.matrixU();
  auto reference_draw = [&](NormalSource& src) {
    Vec xi(mode.size());
    src.fill(xi);
    return Vec(upper.triangularView<Eigen::Upper>().solve(xi));
  };
  auto excess = [&](const Vec& z) {
    const Vec dz = z - mode;
    return action_at(model, boundary, times, z) - s_mode - 0.5 * dz.dot(hess * dz);
  };

  const int chains = std::min(config.chains, n_paths);
  std::vector<int> counts(chains, n_paths / chains);
  for (int c = 0; c < n_paths % chains; ++c) ++counts[c];
  std::vector<int> offsets(chains, 0);
  for (int c = 1; c < chains; ++c) offsets[c] = offsets[c - 1] + counts[c - 1];

  const int total = dim * (steps + 1);
  BridgeEnsemble e;
  e.boundary = boundary;
  e.times = times;
  e.n = n;
  e.seed = seed;
  e.samples.resize(total, n_paths);
  std::vector<double> accept_rate(chains, 0.0), rho_used(chains, config.rho);
  std::vector<Mat> mid_trace(chains);

  parallel_for(static_cast<std::size_t>(chains), [&](std::size_t ci) {
    const int c = static_cast<int>(ci);
    NormalSource src(make_stream(seed, 1000 + ci));
    double rho = config.rho;
    Vec z = mode + reference_draw(src);
    double phi = excess(z);
    int accepted = 0, proposed = 0, window_acc = 0, window = 0;
    auto step = [&]() {
      const Vec prop = mode + rho * (z - mode) + std::sqrt(1.0 - rho * rho) * reference_draw(src);
      const double phi_prop = excess(prop);
      const double log_a = -(phi_prop - phi);
      ++proposed;
      ++window;
      if (std::isfinite(phi_prop) && (log_a >= 0.0 || std::log(src.uniform()) < log_a)) {
        z = prop;
        phi = phi_prop;
        ++accepted;
        ++window_acc;
      }
    };
    for (int w = 0; w < config.warmup; ++w) {
      step();
      if (config.adapt && window == 50) {
        const double rate = static_cast<double>(window_acc) / window;
        if (rate < 0.15)
          rho = std::min(0.999, 1.0 - 0.5 * (1.0 - rho));
        else if (rate > 0.6 && rho > 0.0)
          rho = std::max(0.0, 1.0 - 1.5 * (1.0 - rho));
        window = window_acc = 0;
      }
    }
    accepted = proposed = 0;
    mid_trace[c].resize(dim, counts[c]);
    for (int j = 0; j < counts[c]; ++j) {
      for (int t = 0; t < config.thin; ++t) step();
      const DiscretePath p = unpack_free(z, boundary, times, n);
      e.samples.col(offsets[c] + j) = Eigen::Map<const Vec>(p.values.data(), total);
      mid_trace[c].col(j) = p.values.col(steps / 2);
    }
    accept_rate[c] = proposed > 0 ? static_cast<double>(accepted) / proposed : 1.0;
    rho_used[c] = rho;
  });

  double acc = 0.0, rho_mean = 0.0;
  for (int c = 0; c < chains; ++c) {
    acc += accept_rate[c] * counts[c];
    rho_mean += rho_used[c] / chains;
  }
  e.diagnostics.acceptance = acc / n_paths;
  e.diagnostics.rho = rho_mean;
  e.diagnostics.hessian_min_eig = lam;
  e.diagnostics.ess.assign(dim, 0.0);
  for (int a = 0; a < dim; ++a)
    for (int c = 0; c < chains; ++c) e.diagnostics.ess[a] += effective_sample_size(mid_trace[c].row(a).transpose());
  e.diagnostics.min_ess = *std::min_element(e.diagnostics.ess.begin(), e.diagnostics.ess.end());
  if (e.diagnostics.acceptance < config.min_acceptance)
    fail(ErrorKind::sampler_failure, "acceptance rate " + std::to_string(e.diagnostics.acceptance) +
                                         " below minimum after adaptation");
  return e;
}

// ---- persistence

namespace {

std::string exact_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void write_vec(std::ostream& out, const char* key, const Vec& v) {
  out << key;
  for (Eigen::Index i = 0; i < v.size(); ++i) out << ' ' << exact_num(v[i]);
  out << '\n';
}

Vec read_vec(std::istream& in, const std::string& key, int n) {
  std::string k;
  in >> k;
  require(k == key, ErrorKind::parse, "expected '" + key + "' in ensemble file, got '" + k + "'");
  Vec v(n);
  for (int i = 0; i < n; ++i) in >> v[i];
  return v;
}

}  // namespace

void write_ensemble(std::ostream& out, const BridgeEnsemble& e) {
  out << "tsq-ensemble 1\n";
  out << "modes " << e.n << '\n';
  out << "steps " << e.times.size() - 1 << '\n';
  out << "t0 " << exact_num(e.boundary.t0) << '\n';
  out << "tf " << exact_num(e.boundary.tf) << '\n';
  write_vec(out, "x0", e.boundary.x0);
  write_vec(out, "yf", e.boundary.yf);
  out << "seed " << e.seed << '\n';
  out << "paths " << e.size() << '\n';
  const int dim = 2 * e.n;
  for (int j = 0; j < e.size(); ++j) {
    out << "path " << j << '\n';
    for (std::size_t k = 0; k < e.times.size(); ++k) {
      out << exact_num(e.times[k]);
      for (int c = 0; c < dim; ++c) out << ' ' << exact_num(e.samples(static_cast<Eigen::Index>(k) * dim + c, j));
      out << '\n';
    }
  }
}

BridgeEnsemble read_ensemble(std::istream& in) {
  std::string key;
  int version = 0, steps = 0, paths = 0;
  in >> key >> version;
  require(key == "tsq-ensemble" && version == 1, ErrorKind::parse, "not a tsq ensemble file");
  BridgeEnsemble e;
  in >> key >> e.n;
  require(key == "modes" && e.n >= 1, ErrorKind::parse, "bad modes line");
  in >> key >> steps;
  require(key == "steps" && steps >= 2, ErrorKind::parse, "bad steps line");
  in >> key >> e.boundary.t0;
  in >> key >> e.boundary.tf;
  e.boundary.x0 = read_vec(in, "x0", e.n);
  e.boundary.yf = read_vec(in, "yf", e.n);
  in >> key >> e.seed;
  in >> key >> paths;
  require(key == "paths" && in.good(), ErrorKind::parse, "bad paths line");
  e.times = uniform_times(e.boundary.t0, e.boundary.tf, steps);
  const int dim = 2 * e.n;
  e.samples.resize(dim * (steps + 1), paths);
  for (int j = 0; j < paths; ++j) {
    int idx = -1;
    in >> key >> idx;
    require(key == "path" && idx == j, ErrorKind::parse, "path block out of order");
    for (int k = 0; k <= steps; ++k) {
      double t;
      in >> t;
      for (int c = 0; c < dim; ++c) in >> e.samples(k * dim + c, j);
    }
  }
  require(!in.fail(), ErrorKind::parse, "truncated ensemble file");
  return e;
}

void write_diagnostics_csv(std::ostream& out, const BridgeEnsemble& e) {
  out << "n_paths,acceptance,rho,min_ess,hessian_min_eig,seed\n";
  out << e.size() << ',' << fmt_num(e.diagnostics.acceptance) << ',' << fmt_num(e.diagnostics.rho) << ','
      << fmt_num(e.diagnostics.min_ess) << ',' << fmt_num(e.diagnostics.hessian_min_eig) << ',' << e.seed << '\n';
}

}  // namespace tsq
