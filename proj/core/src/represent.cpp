#include "tsq/represent.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace tsq {

std::string_view to_string(Representability r) {
  switch (r) {
    case Representability::representable: return "representable";
    case Representability::gap: return "gap";
    case Representability::inconclusive: return "inconclusive";
  }
  return "?";
}

QField frame_density_from_husimi(const QField& q, const QuadratureFrame& frame, const PhaseGrid& frame_grid) {
  const int dims = q.grid.dims();
  require(frame_grid.dims() == dims && frame.rotation.rows() == dims, ErrorKind::dimension,
          "frame grid does not match the Husimi grid");
  const double scale = q.measure == Measure::alpha_area ? std::pow(0.5, dims / 2) : 1.0;
  QField out{frame_grid, Vec::Zero(frame_grid.size()), q.time, Measure::phase_space};
  parallel_for(frame_grid.size(), [&](std::size_t i) {
    const Vec p = frame.to_quadrature(frame_grid.point(i));
    // multilinear interpolation over the 2^dims surrounding nodes
    std::vector<int> lo(dims);
    std::vector<double> frac(dims);
    for (int a = 0; a < dims; ++a) {
      const GridAxis& ax = q.grid.axis(a);
      const double f = (p[a] - ax.min) / ax.spacing;
      // snap values within rounding of a node so symmetric grids map exactly
      const double r = std::round(f);
      const double g = std::abs(f - r) < 1e-9 ? r : f;
      lo[a] = static_cast<int>(std::floor(g));
      frac[a] = g - lo[a];
      if (lo[a] < 0 || lo[a] > ax.count - 1 || (lo[a] == ax.count - 1 && frac[a] > 0)) return;
    }
    double v = 0.0;
    for (int corner = 0; corner < (1 << dims); ++corner) {
      double w = 1.0;
      std::size_t flat = 0;
      bool skip = false;
      for (int a = 0; a < dims; ++a) {
        const int up = (corner >> a) & 1;
        w *= up ? frac[a] : 1.0 - frac[a];
        const int idx = lo[a] + up;
        if (w == 0.0) break;
        if (idx >= q.grid.axis(a).count) { skip = true; break; }
        flat += static_cast<std::size_t>(idx) * q.grid.stride(a);
      }
      if (!skip && w != 0.0) v += w * q.values[static_cast<Eigen::Index>(flat)];
    }
    out.values[static_cast<Eigen::Index>(i)] = scale * v;
  });
  return out;
}

Vec smooth_on_grid(const PhaseGrid& grid, const Vec& values, const Vec& bandwidth) {
  require(bandwidth.size() == grid.dims(), ErrorKind::dimension, "bandwidth does not match grid");
  Vec cur = values;
  for (int a = 0; a < grid.dims(); ++a) {
    if (bandwidth[a] <= 0.0) continue;
    const GridAxis& ax = grid.axis(a);
    const int half = static_cast<int>(std::ceil(6.0 * bandwidth[a] / ax.spacing));
    std::vector<double> w(2 * half + 1);
    for (int j = -half; j <= half; ++j) {
      const double u = j * ax.spacing / bandwidth[a];
      w[j + half] = std::exp(-0.5 * u * u);
    }
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w) x /= total;
    Vec next = Vec::Zero(cur.size());
    const std::size_t stride = grid.stride(a);
    parallel_for(grid.size(), [&](std::size_t i) {
      const int k = grid.unflatten(i)[a];
      double s = 0.0;
      for (int j = -half; j <= half; ++j) {
        const int m = k + j;
        if (m < 0 || m >= ax.count) continue;
        s += w[j + half] * cur[static_cast<Eigen::Index>(i + static_cast<std::ptrdiff_t>(j) * static_cast<std::ptrdiff_t>(stride))];
      }
      next[static_cast<Eigen::Index>(i)] = s;
    });
    cur = std::move(next);
  }
  return cur;
}

Vec project_simplex(const Vec& v) {
  std::vector<double> u(v.data(), v.data() + v.size());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  return (v.array() - theta).cwiseMax(0.0);
}

namespace {

std::vector<Eigen::Index> interior_rows(const PhaseGrid& grid, int margin) {
  std::vector<Eigen::Index> rows;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (grid.interior(i, margin)) rows.push_back(static_cast<Eigen::Index>(i));
  return rows;
}

double interior_norm(const Vec& v, const std::vector<Eigen::Index>& rows) {
  double s = 0.0;
  for (auto r : rows) s += v[r] * v[r];
  return std::sqrt(s);
}

}  // namespace

FitResult simplex_least_squares(const Mat& a, const Vec& b, const PhaseGrid& grid, int margin, int max_iterations,
                                double tolerance) {
  require(a.rows() == b.size() && a.rows() == static_cast<Eigen::Index>(grid.size()), ErrorKind::dimension,
          "design matrix does not match the grid");
  require(a.cols() >= 1, ErrorKind::arity, "dictionary is empty");
  const auto rows = interior_rows(grid, margin);
  Mat ai(static_cast<Eigen::Index>(rows.size()), a.cols());
  Vec bi(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    ai.row(static_cast<Eigen::Index>(r)) = a.row(rows[r]);
    bi[static_cast<Eigen::Index>(r)] = b[rows[r]];
  }
  const Mat g = ai.transpose() * ai;
  const Vec h = ai.transpose() * bi;
  const double lip = Eigen::SelfAdjointEigenSolver<Mat>(g).eigenvalues().maxCoeff();
  require(lip > 0.0, ErrorKind::degenerate_measure, "dictionary columns vanish on the grid interior");
  FitResult out;
  Vec w = Vec::Constant(a.cols(), 1.0 / static_cast<double>(a.cols()));
  Vec y = w;
  double t = 1.0;
  for (out.iterations = 1; out.iterations <= max_iterations; ++out.iterations) {
    const Vec next = project_simplex(y - (g * y - h) / lip);
    const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    y = next + ((t - 1.0) / tn) * (next - w);
    const double change = (next - w).cwiseAbs().maxCoeff();
    w = next;
    t = tn;
    if (change < tolerance) break;
  }
  out.weights = w;
  out.residual = (ai * w - bi).norm() / bi.norm();
  return out;
}

namespace {

std::vector<int> interior_steps(const RepresentOptions& opts, const BoundaryDistribution& dict,
                                const std::vector<double>& eval, std::vector<double>& times) {
  require(opts.steps >= 2, ErrorKind::config, "need at least two bridge steps");
  times = uniform_times(dict.t0, dict.tf, opts.steps);
  const auto ks = time_indices(times, eval);
  for (int k : ks)
    require(k > 0 && k < opts.steps, ErrorKind::config, "target times must lie strictly inside the dictionary interval");
  return ks;
}

void check_dictionary(const BoundaryDistribution& dict, const DriftModel& model) {
  require(!dict.atoms.empty(), ErrorKind::config, "dictionary has no atoms");
  require(dict.tf > dict.t0, ErrorKind::config, "dictionary needs t0 < tf");
  for (const auto& at : dict.atoms)
    require(at.x0.size() == model.n() && at.yf.size() == model.n(), ErrorKind::dimension,
            "dictionary atom blocks do not match mode count");
}

}  // namespace

ColumnSet dictionary_columns(const DriftModel& model, const BoundaryDistribution& dict, const PhaseGrid& grid,
                             const std::vector<double>& eval, const RepresentOptions& opts, int budget,
                             std::uint64_t seed, bool halves) {
  check_dictionary(dict, model);
  require(grid.dims() == model.dim(), ErrorKind::dimension, "density grid dimension must equal 2n");
  std::vector<double> times;
  const auto ks = interior_steps(opts, dict, eval, times);
  const std::size_t atoms = dict.atoms.size();
  std::vector<std::vector<Mat>> slices(atoms);
  if (model.d() == 0.0) {
    // no diffusion: each atom is the deterministic boundary-value trajectory
    require(model.is_affine(), ErrorKind::unsupported_hamiltonian,
            "deterministic dictionary columns need an affine drift");
    require(opts.bandwidth.has_value(), ErrorKind::bandwidth, "without diffusion the bandwidth must be given");
    const DriftModel unit = model.with_d(1.0);  // the bridge mean does not depend on d
    for (std::size_t i = 0; i < atoms; ++i) {
      const GaussianBridge gb = gaussian_bridge_exact(unit, dict.boundary(i), times);
      for (int k : ks) slices[i].push_back(gb.marginal_mean(k));
    }
    halves = false;
  } else {
    require(budget >= 2, ErrorKind::config, "need at least two paths per atom");
    parallel_for(atoms, [&](std::size_t i) {
      slices[i] = sample_slices(model, dict.boundary(i), times, ks, budget, atom_seed(seed, i), opts.sampler).values;
    });
  }
  ColumnSet out;
  out.times = eval;
  if (opts.bandwidth) {
    out.bandwidth = *opts.bandwidth;
  } else {
    out.bandwidth = Vec::Zero(model.dim());
    for (const auto& per_atom : slices)
      for (const auto& s : per_atom) out.bandwidth = out.bandwidth.cwiseMax(silverman_bandwidth(s));
    out.bandwidth *= opts.bandwidth_scale;
  }
  require(out.bandwidth.size() == model.dim() && (out.bandwidth.array() > 0.0).all(), ErrorKind::bandwidth,
          "dictionary bandwidth must be positive on every axis");
  const auto rows = static_cast<Eigen::Index>(grid.size());
  for (std::size_t t = 0; t < ks.size(); ++t) {
    Mat cols = Mat::Zero(rows, static_cast<Eigen::Index>(atoms));
    Mat ha, hb;
    if (halves) ha = hb = cols;
    parallel_for(atoms, [&](std::size_t i) {
      const Mat& s = slices[i][t];
      const auto col = static_cast<Eigen::Index>(i);
      Vec c = Vec::Zero(rows);
      accumulate_kde(grid, s, out.bandwidth, 1.0, c);
      cols.col(col) = c;
      if (halves) {
        const Eigen::Index n = s.cols(), m = n / 2;
        Vec ca = Vec::Zero(rows), cb = Vec::Zero(rows);
        accumulate_kde(grid, s.leftCols(m), out.bandwidth, 1.0, ca);
        accumulate_kde(grid, s.rightCols(n - m), out.bandwidth, 1.0, cb);
        ha.col(col) = ca;
        hb.col(col) = cb;
      }
    });
    out.columns.push_back(std::move(cols));
    if (halves) {
      out.half_a.push_back(std::move(ha));
      out.half_b.push_back(std::move(hb));
    }
  }
  return out;
}

Mat exact_columns(const DriftModel& model, const BoundaryDistribution& dict, const PhaseGrid& grid, double time,
                  const RepresentOptions& opts, const Vec& bandwidth) {
  require(model.is_affine(), ErrorKind::unsupported_hamiltonian, "exact columns need an affine drift");
  check_dictionary(dict, model);
  std::vector<double> times;
  const int k = interior_steps(opts, dict, {time}, times)[0];
  Mat cols(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(dict.atoms.size()));
  const DriftModel law = model.d() == 0.0 ? model.with_d(1.0) : model;
  parallel_for(dict.atoms.size(), [&](std::size_t i) {
    const GaussianBridge gb = gaussian_bridge_exact(law, dict.boundary(i), times);
    Mat cov = model.d() == 0.0 ? Mat::Zero(model.dim(), model.dim()) : gb.marginal_covariance(k);
    for (int a = 0; a < model.dim(); ++a) cov(a, a) += bandwidth[a] * bandwidth[a];
    cols.col(static_cast<Eigen::Index>(i)) = gaussian_on_grid(grid, gb.marginal_mean(k), cov);
  });
  return cols;
}

double weight_tv(const Vec& w, const Vec& v) {
  require(w.size() == v.size(), ErrorKind::dimension, "weight vectors differ in length");
  return 0.5 * (w - v).cwiseAbs().sum();
}

namespace {

struct Pass {
  FitResult fit;
  std::vector<double> residual, floor;  // per time, fit time first
  double linf = 0.0;
  Vec bandwidth;
  Vec smoothed;
  Mat cols;
  std::string method;

  [[nodiscard]] double worst_ratio() const {
    double r = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i) r = std::max(r, residual[i] / floor[i]);
    return r;
  }
};

Pass run_pass(const DriftModel& model, const BoundaryDistribution& dict, const std::vector<QField>& targets,
              std::uint64_t seed, const RepresentOptions& opts, int budget) {
  Pass p;
  const PhaseGrid& grid = targets[0].grid;
  std::vector<double> eval{opts.time};
  eval.insert(eval.end(), opts.holdout_times.begin(), opts.holdout_times.end());
  const bool exact_floor = model.is_affine();
  const ColumnSet cs = dictionary_columns(model, dict, grid, eval, opts, budget, seed, !exact_floor);
  p.bandwidth = cs.bandwidth;
  p.smoothed = smooth_on_grid(grid, targets[0].values, p.bandwidth);
  p.cols = cs.columns[0];
  p.fit = simplex_least_squares(p.cols, p.smoothed, grid, opts.margin, opts.max_iterations, opts.tolerance);
  const auto rows = interior_rows(grid, opts.margin);
  for (std::size_t t = 0; t < eval.size(); ++t) {
    const Vec b = t == 0 ? p.smoothed : smooth_on_grid(grid, targets[t].values, p.bandwidth);
    const double bn = interior_norm(b, rows);
    const Vec model_density = cs.columns[t] * p.fit.weights;
    p.residual.push_back(interior_norm(model_density - b, rows) / bn);
    double fl;
    if (exact_floor) {
      // Monte Carlo error of the fitted combination against its exact counterpart
      const Mat ex = exact_columns(model, dict, grid, eval[t], opts, p.bandwidth);
      fl = interior_norm((cs.columns[t] - ex) * p.fit.weights, rows) / bn;
      p.method = model.d() == 0.0 ? "exact-columns (deterministic points)" : "exact-columns";
    } else {
      fl = interior_norm((cs.half_a[t] - cs.half_b[t]) * p.fit.weights, rows) / (2.0 * bn);
      p.method = "split-half";
    }
    // quadrature and interpolation floor
    p.floor.push_back(std::max(fl, 1e-9));
    if (t == 0) {
      double md = 0.0, mb = 0.0;
      for (auto r : rows) {
        md = std::max(md, std::abs(model_density[r] - b[r]));
        mb = std::max(mb, std::abs(b[r]));
      }
      p.linf = md / mb;
    }
  }
  return p;
}

}  // namespace

RepresentResult represent(const DriftModel& model, const BoundaryDistribution& dict, const std::vector<QField>& targets,
                          std::uint64_t seed, const RepresentOptions& opts) {
  require(targets.size() == 1 + opts.holdout_times.size(), ErrorKind::arity,
          "need one target for the fit time and one per holdout time");
  for (const auto& t : targets) {
    require(t.measure == Measure::phase_space, ErrorKind::config,
            "targets must be densities over frame coordinates (use frame_density_from_husimi)");
    require(t.grid == targets[0].grid && t.grid.dims() == model.dim(), ErrorKind::dimension,
            "targets must share one grid of dimension 2n");
  }
  require(opts.representable_factor > 0 && opts.gap_factor >= opts.representable_factor, ErrorKind::config,
          "need 0 < representable factor <= gap factor");
  RepresentResult r;
  const Pass p = run_pass(model, dict, targets, seed, opts, opts.budget);
  r.weights = p.fit.weights;
  r.residual = p.residual[0];
  r.residual_linf = p.linf;
  r.floor = p.floor[0];
  for (std::size_t t = 1; t < p.residual.size(); ++t)
    r.holdout.push_back({opts.holdout_times[t - 1], p.residual[t], p.floor[t]});
  r.floor_method = p.method;
  r.iterations = p.fit.iterations;
  r.bandwidth = p.bandwidth;
  r.budget = opts.budget;
  const QField& t0 = targets[0];
  r.target = {t0.grid, p.smoothed, t0.time, Measure::phase_space};
  r.fit = {t0.grid, p.cols * p.fit.weights, t0.time, Measure::phase_space};
  const double ratio = p.worst_ratio();
  if (p.fit.iterations > opts.max_iterations) {
    r.verdict = Representability::inconclusive;  // iteration cap
  } else if (ratio <= opts.representable_factor) {
    r.verdict = Representability::representable;
  } else if (ratio > opts.gap_factor) {
    r.verdict = Representability::gap;
    if (opts.confirm_gap && model.d() > 0.0) {
      const Pass q = run_pass(model, dict, targets, make_stream(seed, 2)(), opts, 2 * opts.budget);
      r.residual_doubled = q.residual[0];
      r.floor_doubled = q.floor[0];
      if (!(q.worst_ratio() > opts.gap_factor)) r.verdict = Representability::inconclusive;
    }
  } else {
    r.verdict = Representability::inconclusive;
  }
  return r;
}

RepresentResult represent(const DriftModel& model, const BoundaryDistribution& dict, const QField& target,
                          std::uint64_t seed, const RepresentOptions& opts) {
  require(opts.holdout_times.empty(), ErrorKind::arity, "holdout times need their own targets");
  return represent(model, dict, std::vector<QField>{target}, seed, opts);
}

void write_weights_csv(std::ostream& out, const BoundaryDistribution& dict, const RepresentResult& r) {
  const int n = dict.modes();
  out << "atom";
  for (int c = 0; c < n; ++c) out << ",x0_" << c + 1;
  for (int c = 0; c < n; ++c) out << ",yf_" << c + 1;
  out << ",weight\n";
  for (std::size_t i = 0; i < dict.atoms.size(); ++i) {
    out << i;
    for (int c = 0; c < n; ++c) out << ',' << fmt_num(dict.atoms[i].x0[c]);
    for (int c = 0; c < n; ++c) out << ',' << fmt_num(dict.atoms[i].yf[c]);
    out << ',' << fmt_num(r.weights[static_cast<Eigen::Index>(i)]) << '\n';
  }
}

void write_represent_summary_csv(std::ostream& out, const RepresentResult& r) {
  out << "time,role,residual_l2,mc_floor,ratio\n";
  out << fmt_num(r.target.time) << ",fit," << fmt_num(r.residual) << ',' << fmt_num(r.floor) << ','
      << fmt_num(r.residual / r.floor) << '\n';
  for (const auto& h : r.holdout)
    out << fmt_num(h.time) << ",holdout," << fmt_num(h.residual) << ',' << fmt_num(h.floor) << ','
        << fmt_num(h.residual / h.floor) << '\n';
}

}  // namespace tsq
