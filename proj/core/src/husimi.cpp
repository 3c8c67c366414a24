#include "tsq/husimi.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>

namespace tsq {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

CVec coherent_overlaps(const CVec& alpha, int n_max) {
  CVec c(1);
  c[0] = 1.0;
  for (Eigen::Index k = 0; k < alpha.size(); ++k) {
    CVec single(n_max + 1);
    single[0] = std::exp(-0.5 * std::norm(alpha[k]));
    for (int n = 1; n <= n_max; ++n) single[n] = single[n - 1] * alpha[k] / std::sqrt(static_cast<double>(n));
    CVec next(c.size() * single.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) next.segment(i * single.size(), single.size()) = c[i] * single;
    c = std::move(next);
  }
  return c;
}

struct SpectralForm {
  std::vector<double> weights;
  std::vector<CVec> vectors;
};

SpectralForm spectral_form(const FockState& rho) {
  Eigen::SelfAdjointEigenSolver<CMat> es(rho.rho());
  SpectralForm s;
  for (Eigen::Index k = 0; k < es.eigenvalues().size(); ++k) {
    if (es.eigenvalues()[k] <= 1e-15) continue;
    s.weights.push_back(es.eigenvalues()[k]);
    s.vectors.push_back(es.eigenvectors().col(k));
  }
  return s;
}

double q_from_spectral(const SpectralForm& s, const CVec& c, int modes) {
  double q = 0.0;
  for (std::size_t k = 0; k < s.weights.size(); ++k) q += s.weights[k] * std::norm(c.dot(s.vectors[k]));
  return q / std::pow(M_PI, modes);
}

// Enumerate multi-indices with 1 <= |m| <= max_order over n modes.
void enumerate(int modes, int max_order, std::vector<int>& cur, int pos, int used,
               std::vector<std::vector<int>>& out) {
  if (pos == modes) {
    if (used >= 1) out.push_back(cur);
    return;
  }
  for (int k = 0; used + k <= max_order; ++k) {
    cur[pos] = k;
    enumerate(modes, max_order, cur, pos + 1, used + k, out);
  }
  cur[pos] = 0;
}

double binom(int n, int k) {
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

// prod_i ((D_xi - i D_yi)/sqrt 2)^{m_i} applied to u.
CVec holomorphic_derivative(const PhaseGrid& g, const CVec& u, const std::vector<int>& m) {
  const int modes = static_cast<int>(m.size());
  CVec cur = u;
  for (int i = 0; i < modes; ++i) {
    const int k = m[i];
    if (k == 0) continue;
    CVec acc = CVec::Zero(u.size());
    for (int j = 0; j <= k; ++j) {
      CVec term = grid_derivative(g, cur, i, k - j);
      term = grid_derivative(g, term, modes + i, j);
      acc += binom(k, j) * std::pow(Complex(0.0, -1.0), j) * term;
    }
    cur = acc / std::pow(kSqrt2, k);
  }
  return cur;
}

double factorial_multi(const std::vector<int>& m) {
  double f = 1.0;
  for (int k : m)
    for (int i = 2; i <= k; ++i) f *= i;
  return f;
}

void check_q_grid(const QField& q, const ComplexPolynomial& h) {
  require(q.grid.dims() == 2 * h.num_modes(), ErrorKind::dimension, "Q grid dimension does not match symbol modes");
  require(static_cast<std::size_t>(q.values.size()) == q.grid.size(), ErrorKind::dimension, "Q values do not match grid");
}

}  // namespace

PhaseGrid husimi_grid(int modes, double lo, double hi, double h) { return PhaseGrid::uniform(2 * modes, lo, hi, h); }

double husimi_value(const FockState& rho, const CVec& alpha) {
  require(alpha.size() == rho.num_modes(), ErrorKind::dimension, "alpha has wrong mode count");
  const CVec c = coherent_overlaps(alpha, rho.n_max());
  return (c.adjoint() * rho.rho() * c)(0, 0).real() / std::pow(M_PI, rho.num_modes());
}

HusimiField husimi_from_fock(const FockState& rho, const PhaseGrid& grid, double time, double leak_warn) {
  const int modes = rho.num_modes();
  require(grid.dims() == 2 * modes, ErrorKind::dimension, "grid dimension must be 2N");
  const SpectralForm s = spectral_form(rho);
  HusimiField out;
  out.field.grid = grid;
  out.field.time = time;
  out.field.measure = Measure::alpha_area;
  out.field.values.resize(static_cast<Eigen::Index>(grid.size()));
  parallel_for(grid.size(), [&](std::size_t i) {
    out.field.values[i] = q_from_spectral(s, coherent_overlaps(phi_to_alpha(grid.point(i)), rho.n_max()), modes);
  });
  // Q of the truncated state is exact; what can go wrong is population piling up against the
  // cutoff, or Q mass falling outside the grid.
  const double tail = rho.tail_population(5);
  const double outside = std::abs(1.0 - out.field.integral());
  out.truncation_leakage = std::max(tail, outside);
  if (out.truncation_leakage > leak_warn)
    out.warnings.push_back("Fock cutoff " + std::to_string(rho.n_max()) + " or grid extent too small: top-level population " +
                           std::to_string(tail) + ", Q mass outside grid " + std::to_string(outside));
  return out;
}

Vec series_rhs(const QField& q, const ComplexPolynomial& h, int max_order) {
  check_q_grid(q, h);
  require(max_order >= 1, ErrorKind::unsupported_order, "series order must be >= 1");
  require(max_order <= kMaxStencilOrder, ErrorKind::unsupported_order,
          "series order " + std::to_string(max_order) + " exceeds supported stencil order");
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "series needs a hermitian symbol");
  const int modes = h.num_modes();
  std::vector<std::vector<int>> indices;
  std::vector<int> cur(modes, 0);
  enumerate(modes, max_order, cur, 0, 0, indices);

  const PhaseGrid& g = q.grid;
  std::vector<Vec> points(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) points[i] = g.point(i);

  Vec rhs = Vec::Zero(q.values.size());
  for (const auto& m : indices) {
    const ComplexPolynomial dbar = wirtinger_derivative(h, m, true);
    if (dbar.empty()) continue;  // |m| beyond the symbol's degree contributes nothing
    int order = 0;
    for (int k : m) order += k;
    CVec u(q.values.size());
    for (std::size_t i = 0; i < g.size(); ++i) u[i] = dbar.evaluate_phi(points[i]) * q.values[i];
    // For a real symbol, dbar^m(d^m H Q) = conj(d^m(dbar^m H Q)), so the bracket is 2i Im(d^m u).
    const CVec dm = holomorphic_derivative(g, u, m);
    const double coeff = -2.0 * std::pow(h.hbar(), order - 1) / factorial_multi(m);
    rhs += coeff * dm.imag();
  }
  return rhs;
}

Vec fokker_planck_rhs(const PhaseGrid& grid, const Vec& rho, const std::function<Vec(const Vec&)>& drift,
                      const std::function<Mat(const Vec&)>& diffusion) {
  const int dims = grid.dims();
  std::vector<Vec> a(dims, Vec(rho.size()));
  std::vector<std::vector<Vec>> dm(dims, std::vector<Vec>(dims));
  for (int p = 0; p < dims; ++p)
    for (int r = p; r < dims; ++r) dm[p][r] = Vec(rho.size());
  bool any_diffusion = false;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec phi = grid.point(i);
    const Vec ai = drift(phi);
    for (int p = 0; p < dims; ++p) a[p][i] = ai[p] * rho[i];
    if (diffusion) {
      const Mat di = diffusion(phi);
      for (int p = 0; p < dims; ++p)
        for (int r = p; r < dims; ++r) {
          dm[p][r][i] = di(p, r) * rho[i];
          any_diffusion = any_diffusion || di(p, r) != 0.0;
        }
    }
  }
  Vec out = Vec::Zero(rho.size());
  for (int p = 0; p < dims; ++p) out -= grid_derivative(grid, a[p], p, 1);
  if (any_diffusion) {
    for (int p = 0; p < dims; ++p) {
      out += 0.5 * grid_derivative(grid, dm[p][p], p, 2);
      for (int r = p + 1; r < dims; ++r) out += grid_derivative(grid, grid_derivative(grid, dm[p][r], p, 1), r, 1);
    }
  }
  return out;
}

bool fpe_eligible(const ComplexPolynomial& h) { return h.max_degree_per_variable() <= 2; }

FpeParts fpe_rhs_parts(const QField& q, const ComplexPolynomial& h) {
  check_q_grid(q, h);
  require(fpe_eligible(h), ErrorKind::unsupported_hamiltonian,
          "Fokker-Planck truncation requires a symbol at most quadratic in each variable");
  const DriftField drift = drift_field(h);
  FpeParts parts;
  parts.drift = fokker_planck_rhs(q.grid, q.values, [&](const Vec& p) { return drift(p); }, {});
  const Vec zero_drift = Vec::Zero(q.grid.dims());
  parts.diffusion = fokker_planck_rhs(
      q.grid, q.values, [&](const Vec&) { return zero_drift; },
      [&](const Vec& p) { return diffusion_matrix(h, p); });
  return parts;
}

Vec fpe_rhs(const QField& q, const ComplexPolynomial& h) {
  check_q_grid(q, h);
  require(fpe_eligible(h), ErrorKind::unsupported_hamiltonian,
          "Fokker-Planck truncation requires a symbol at most quadratic in each variable");
  const DriftField drift = drift_field(h);
  return fokker_planck_rhs(
      q.grid, q.values, [&](const Vec& p) { return drift(p); }, [&](const Vec& p) { return diffusion_matrix(h, p); });
}

bool ResidualReport::all_pass() const {
  return std::all_of(rows.begin(), rows.end(), [](const ResidualRow& r) { return r.pass; });
}

namespace {

double relative_residual(const PhaseGrid& g, const Vec& dq, const Vec& rhs, int margin, double* max_rel) {
  double num = 0.0, den_a = 0.0, den_b = 0.0, peak = 0.0, worst = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!g.interior(i, margin)) continue;
    const double r = dq[i] - rhs[i];
    num += r * r;
    den_a += dq[i] * dq[i];
    den_b += rhs[i] * rhs[i];
    peak = std::max({peak, std::abs(dq[i]), std::abs(rhs[i])});
    worst = std::max(worst, std::abs(r));
  }
  const double den = std::max(den_a, den_b);
  if (den < 1e-28) {
    if (max_rel) *max_rel = 0.0;
    return 0.0;
  }
  if (max_rel) *max_rel = worst / peak;
  return std::sqrt(num / den);
}

}  // namespace

ResidualReport fpe_residual_check(const ComplexPolynomial& h, const FockState& rho0, const std::vector<double>& times,
                                  const PhaseGrid& grid, const ResidualOptions& opts) {
  require(!times.empty(), ErrorKind::arity, "residual check needs at least one time");
  require(grid.dims() == 2 * h.num_modes(), ErrorKind::dimension, "grid dimension does not match symbol");
  const bool eligible = fpe_eligible(h);
  const FockEvolver evolver(h, rho0.num_modes(), rho0.n_max());
  double hmax = 0.0;
  for (const auto& a : grid.axes()) hmax = std::max(hmax, a.spacing);
  const double threshold = opts.constant * (hmax * hmax + opts.delta * opts.delta);

  ResidualReport report;
  report.n_max = rho0.n_max();
  bool series_explains = true;
  for (double t : times) {
    const QField qm = husimi_from_fock(evolver.evolve(rho0, t - opts.delta), grid, t - opts.delta).field;
    const QField qp = husimi_from_fock(evolver.evolve(rho0, t + opts.delta), grid, t + opts.delta).field;
    const QField q0 = husimi_from_fock(evolver.evolve(rho0, t), grid, t).field;
    const Vec dq = (qp.values - qm.values) / (2.0 * opts.delta);
    const Vec rhs = eligible ? fpe_rhs(q0, h) : series_rhs(q0, h, 2);
    ResidualRow row;
    row.time = t;
    row.l2_residual = relative_residual(grid, dq, rhs, opts.margin, &row.max_residual);
    row.threshold = threshold;
    row.pass = row.l2_residual <= threshold;
    if (!eligible) {
      const int full = std::min(h.total_degree(), kMaxStencilOrder);
      row.series_l2_residual = relative_residual(grid, dq, series_rhs(q0, h, full), opts.margin, nullptr);
      series_explains = series_explains && row.series_l2_residual <= threshold;
    }
    report.rows.push_back(row);
  }
  if (report.all_pass())
    report.verdict = "consistent";
  else if (!eligible && series_explains)
    report.verdict = "series-term-detected";
  else
    report.verdict = "inconsistent";
  return report;
}

void write_residual_csv(std::ostream& out, const ResidualReport& report) {
  out << "time,max_residual,l2_residual,threshold,pass\n";
  for (const auto& r : report.rows)
    out << fmt_num(r.time) << ',' << fmt_num(r.max_residual) << ',' << fmt_num(r.l2_residual) << ','
        << fmt_num(r.threshold) << ',' << (r.pass ? "true" : "false") << '\n';
}

double expectation(const ComplexPolynomial& a, const QField& q) {
  check_q_grid(q, a);
  require(a.is_hermitian(), ErrorKind::unsupported_hamiltonian, "observable symbol must be hermitian");
  Vec w(q.values.size());
  for (std::size_t i = 0; i < q.grid.size(); ++i) w[i] = a.evaluate_phi(q.grid.point(i)).real();
  return q.integral_of(w);
}

double boundary_mass_fraction(const QField& q, int cells) {
  double edge = 0.0, total = 0.0;
  for (std::size_t i = 0; i < q.grid.size(); ++i) {
    const double v = std::abs(q.values[i]);
    total += v;
    if (!q.grid.interior(i, cells)) edge += v;
  }
  return total > 0 ? edge / total : 0.0;
}

namespace {

Vec rk4_flow(const DriftField& drift, Vec phi, double dt, int steps) {
  for (int s = 0; s < steps; ++s) {
    const Vec k1 = drift(phi);
    const Vec k2 = drift(phi + 0.5 * dt * k1);
    const Vec k3 = drift(phi + 0.5 * dt * k2);
    const Vec k4 = drift(phi + dt * k3);
    phi += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
  return phi;
}

// Tensor-product 6-point Lagrange interpolation; zero outside the grid.
double interpolate(const QField& q, const Vec& p) {
  const PhaseGrid& g = q.grid;
  const int dims = g.dims();
  constexpr int kPts = 6;
  std::vector<int> start(dims);
  std::vector<std::array<double, kPts>> w(dims);
  for (int k = 0; k < dims; ++k) {
    const auto& ax = g.axis(k);
    const double u = (p[k] - ax.min) / ax.spacing;
    if (u < 0.0 || u > ax.count - 1) return 0.0;
    const int base = std::clamp(static_cast<int>(std::floor(u)) - 2, 0, ax.count - kPts);
    start[k] = base;
    for (int a = 0; a < kPts; ++a) {
      double l = 1.0;
      for (int b = 0; b < kPts; ++b)
        if (b != a) l *= (u - (base + b)) / static_cast<double>(a - b);
      w[k][a] = l;
    }
  }
  double acc = 0.0;
  std::vector<int> idx(dims, 0);
  while (true) {
    double weight = 1.0;
    std::size_t flat = 0;
    for (int k = 0; k < dims; ++k) {
      weight *= w[k][idx[k]];
      flat += static_cast<std::size_t>(start[k] + idx[k]) * g.stride(k);
    }
    acc += weight * q.values[flat];
    int k = dims - 1;
    while (k >= 0 && ++idx[k] == kPts) idx[k--] = 0;
    if (k < 0) break;
  }
  return acc;
}

}  // namespace

QField liouville_evolve(const QField& q, const ComplexPolynomial& h, double t, int steps, const LiouvilleOptions& opts) {
  check_q_grid(q, h);
  require(steps >= 1, ErrorKind::cfl, "need at least one characteristic step");
  if (t == 0.0 || h.empty()) return QField{q.grid, q.values, q.time + t, q.measure};
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "Liouville transport needs a hermitian symbol");
  const DriftField drift(h);
  const double dt = t / steps;
  double hmin = q.grid.axis(0).spacing;
  for (const auto& a : q.grid.axes()) hmin = std::min(hmin, a.spacing);
  double vmax = 0.0;
  for (std::size_t i = 0; i < q.grid.size(); ++i) vmax = std::max(vmax, drift(q.grid.point(i)).norm());
  if (vmax * std::abs(dt) > opts.max_cells_per_step * hmin)
    fail(ErrorKind::cfl, "characteristic step moves " + std::to_string(vmax * std::abs(dt) / hmin) +
                             " cells; increase steps");
  QField out{q.grid, Vec(q.values.size()), q.time + t, q.measure};
  for (std::size_t i = 0; i < q.grid.size(); ++i) {
    const Vec foot = rk4_flow(drift, q.grid.point(i), -dt, steps);
    out.values[i] = interpolate(q, foot);
  }
  return out;
}

double flow_volume_deviation(const ComplexPolynomial& h, const std::vector<Vec>& points, double t, int steps) {
  const DriftField drift(h);
  const double dt = t / steps;
  double worst = 0.0;
  for (const Vec& p : points) {
    const int n = static_cast<int>(p.size());
    Mat jac(n, n);
    const double eps = 1e-5;
    for (int k = 0; k < n; ++k) {
      Vec a = p, b = p;
      a[k] += eps;
      b[k] -= eps;
      jac.col(k) = (rk4_flow(drift, a, dt, steps) - rk4_flow(drift, b, dt, steps)) / (2 * eps);
    }
    worst = std::max(worst, std::abs(jac.determinant() - 1.0));
  }
  return worst;
}

}  // namespace tsq
