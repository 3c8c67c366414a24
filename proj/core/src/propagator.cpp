#include "tsq/propagator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <sstream>

#include "tsq/husimi.hpp"

namespace tsq {

BoundaryDistribution BoundaryDistribution::single(double t0, double tf, Vec x0, Vec yf) {
  BoundaryDistribution p;
  p.t0 = t0;
  p.tf = tf;
  p.atoms.push_back({std::move(x0), std::move(yf), 1.0});
  return p;
}

BridgeBoundary BoundaryDistribution::boundary(std::size_t atom) const {
  return {t0, tf, atoms.at(atom).x0, atoms.at(atom).yf};
}

void BoundaryDistribution::validate(int n) const {
  require(!atoms.empty(), ErrorKind::config, "boundary distribution has no atoms");
  require(tf > t0, ErrorKind::config, "boundary distribution needs t0 < tf");
  double total = 0.0;
  for (const auto& a : atoms) {
    require(a.x0.size() == n && a.yf.size() == n, ErrorKind::dimension, "boundary atom blocks do not match mode count");
    require(a.weight >= 0.0 && std::isfinite(a.weight), ErrorKind::config, "boundary weights must be nonnegative");
    total += a.weight;
  }
  require(std::abs(total - 1.0) <= 1e-12, ErrorKind::config,
          "boundary weights sum to " + std::to_string(total) + ", not 1");
}

std::vector<int> time_indices(const std::vector<double>& bridge_times, const std::vector<double>& eval_times) {
  const double span = bridge_times.back() - bridge_times.front();
  std::vector<int> out;
  for (double t : eval_times) {
    const auto it = std::min_element(bridge_times.begin(), bridge_times.end(),
                                     [t](double a, double b) { return std::abs(a - t) < std::abs(b - t); });
    require(std::abs(*it - t) <= 1e-9 * span, ErrorKind::config,
            "evaluation time " + std::to_string(t) + " is not a node of the bridge time grid");
    out.push_back(static_cast<int>(it - bridge_times.begin()));
  }
  return out;
}

SliceSamples sample_slices(const DriftModel& model, const BridgeBoundary& boundary, const std::vector<double>& bridge_times,
                           const std::vector<int>& steps, int n_paths, std::uint64_t seed, const SamplerConfig& sampler) {
  const BridgeEnsemble e = sample_bridges(model, boundary, bridge_times, n_paths, seed, sampler);
  SliceSamples out;
  out.steps = steps;
  out.diagnostics = e.diagnostics;
  for (int k : steps) out.values.push_back(e.slice(k));
  return out;
}

Vec silverman_bandwidth(const Mat& samples) {
  const Eigen::Index dim = samples.rows();
  const double n = static_cast<double>(samples.cols());
  const Vec mean = samples.rowwise().mean();
  Vec sd(dim);
  int spread = 0;
  for (Eigen::Index a = 0; a < dim; ++a) {
    sd[a] = std::sqrt((samples.row(a).array() - mean[a]).square().sum() / std::max(1.0, n - 1));
    if (sd[a] > 1e-14 * std::max(1.0, std::abs(mean[a]))) ++spread;
    else sd[a] = 0.0;
  }
  const double factor = std::pow(4.0 / ((spread + 2) * n), 1.0 / (spread + 4));
  return sd * factor;
}

namespace {

struct AxisWeights {
  int start = 0;
  std::vector<double> w;
};

AxisWeights axis_weights(const GridAxis& ax, double s, double bw) {
  AxisWeights out;
  if (bw <= 0.0) {
    const double f = (s - ax.min) / ax.spacing;
    const int i = static_cast<int>(std::floor(f));
    const double frac = f - i;
    if (i < -1 || i >= ax.count) return out;
    out.start = i;
    out.w = {(1.0 - frac) / ax.spacing, frac / ax.spacing};
    if (i == -1) {
      out.start = 0;
      out.w = {frac / ax.spacing};
    } else if (i == ax.count - 1) {
      out.w.pop_back();
    }
    return out;
  }
  const double reach = 6.0 * bw;
  const int lo = std::max(0, static_cast<int>(std::ceil((s - reach - ax.min) / ax.spacing)));
  const int hi = std::min(ax.count - 1, static_cast<int>(std::floor((s + reach - ax.min) / ax.spacing)));
  if (hi < lo) return out;
  out.start = lo;
  const double norm = 1.0 / (std::sqrt(2.0 * M_PI) * bw);
  for (int i = lo; i <= hi; ++i) {
    const double u = (ax.coord(i) - s) / bw;
    out.w.push_back(norm * std::exp(-0.5 * u * u));
  }
  return out;
}

}  // namespace

void accumulate_kde(const PhaseGrid& grid, const Mat& samples, const Vec& bandwidth, double weight, Vec& out) {
  const int dims = grid.dims();
  require(samples.rows() == dims && bandwidth.size() == dims, ErrorKind::dimension, "KDE samples do not match grid");
  require(out.size() == static_cast<Eigen::Index>(grid.size()), ErrorKind::dimension, "KDE output has wrong size");
  const double w0 = weight / static_cast<double>(samples.cols());
  std::vector<AxisWeights> aw(dims);
  std::vector<int> idx(dims);
  for (Eigen::Index j = 0; j < samples.cols(); ++j) {
    bool empty = false;
    for (int a = 0; a < dims; ++a) {
      aw[a] = axis_weights(grid.axis(a), samples(a, j), bandwidth[a]);
      empty = empty || aw[a].w.empty();
    }
    if (empty) continue;
    std::fill(idx.begin(), idx.end(), 0);
    // odometer over the tensor window
    while (true) {
      double w = w0;
      std::size_t flat = 0;
      for (int a = 0; a < dims; ++a) {
        w *= aw[a].w[idx[a]];
        flat += static_cast<std::size_t>(aw[a].start + idx[a]) * grid.stride(a);
      }
      out[static_cast<Eigen::Index>(flat)] += w;
      int a = dims - 1;
      while (a >= 0 && ++idx[a] == static_cast<int>(aw[a].w.size())) idx[a--] = 0;
      if (a < 0) break;
    }
  }
}

namespace {

// Pinned coordinates of psi at bridge step k.
std::vector<bool> pinned_mask(int n, int k, int steps) {
  std::vector<bool> m(2 * n, false);
  for (int c = 0; c < n; ++c) {
    if (k == 0) m[c] = true;
    if (k == steps) m[n + c] = true;
  }
  return m;
}

Vec slice_bandwidth(const Mat& samples, const std::vector<bool>& pinned, const KdeOptions& kde) {
  Vec bw = kde.bandwidth ? *kde.bandwidth : Vec(kde.bandwidth_scale * silverman_bandwidth(samples));
  require(bw.size() == samples.rows(), ErrorKind::dimension, "bandwidth has wrong length");
  for (Eigen::Index a = 0; a < bw.size(); ++a) {
    if (pinned[a]) {
      bw[a] = 0.0;
      continue;
    }
    require(bw[a] > 0.0 && std::isfinite(bw[a]), ErrorKind::bandwidth,
            "automatic bandwidth selection failed (zero spread in a free coordinate); supply an explicit bandwidth");
  }
  return bw;
}

void check_grid(const PhaseGrid& grid, const DriftModel& model) {
  require(grid.dims() == model.dim(), ErrorKind::dimension, "density grid dimension must equal 2n");
}

}  // namespace

PropagatorEstimate estimate_tsp(const DriftModel& model, const BridgeBoundary& boundary,
                                const std::vector<double>& eval_times, int n_paths, std::uint64_t seed,
                                const PhaseGrid& grid, const TspOptions& opts) {
  check_grid(grid, model);
  const auto bridge_times = uniform_times(boundary.t0, boundary.tf, opts.steps);
  const auto steps = time_indices(bridge_times, eval_times);
  const SliceSamples s = sample_slices(model, boundary, bridge_times, steps, n_paths, seed, opts.sampler);
  require(s.diagnostics.min_ess >= opts.min_ess_fraction * n_paths, ErrorKind::sampler_failure,
          "bridge sampler ESS " + std::to_string(s.diagnostics.min_ess) + " below the required fraction of " +
              std::to_string(n_paths) + " paths");
  PropagatorEstimate est;
  est.boundary = boundary;
  est.times = eval_times;
  est.n_paths = n_paths;
  est.min_ess = s.diagnostics.min_ess;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    const Vec bw = slice_bandwidth(s.values[i], pinned_mask(model.n(), steps[i], opts.steps), opts.kde);
    QField q{grid, Vec::Zero(grid.size()), eval_times[i], Measure::phase_space};
    accumulate_kde(grid, s.values[i], bw, 1.0, q.values);
    est.slices.push_back(std::move(q));
    est.bandwidths.push_back(bw);
  }
  return est;
}

std::uint64_t atom_seed(std::uint64_t seed, std::size_t atom) { return make_stream(seed, 0x100000 + atom)(); }

namespace {

std::string fmt_vec(const Vec& v) {
  std::ostringstream out;
  out << '(';
  for (Eigen::Index i = 0; i < v.size(); ++i) out << (i ? " " : "") << fmt_num(v[i]);
  out << ')';
  return out.str();
}

}  // namespace

MixtureSeries mix_over_boundaries(const DriftModel& model, const BoundaryDistribution& p,
                                  const std::vector<double>& eval_times, int budget, std::uint64_t seed,
                                  const PhaseGrid& grid, const TspOptions& opts) {
  check_grid(grid, model);
  p.validate(model.n());
  require(budget >= 1000, ErrorKind::config, "mixture budget must be at least 1000 paths per atom");
  const auto bridge_times = uniform_times(p.t0, p.tf, opts.steps);
  const auto steps = time_indices(bridge_times, eval_times);
  const std::size_t atoms = p.atoms.size();
  std::vector<SliceSamples> samples(atoms);
  parallel_for(atoms, [&](std::size_t i) {
    samples[i] = sample_slices(model, p.boundary(i), bridge_times, steps, budget, atom_seed(seed, i), opts.sampler);
  });
  for (const auto& s : samples)
    require(s.diagnostics.min_ess >= opts.min_ess_fraction * budget, ErrorKind::sampler_failure,
            "bridge sampler ESS " + std::to_string(s.diagnostics.min_ess) + " below the required fraction of " +
                std::to_string(budget) + " paths");

  // one bandwidth for every atom and slice, so the smoothing is a fixed linear operator
  Vec bw;
  if (opts.kde.bandwidth) {
    bw = *opts.kde.bandwidth;
  } else {
    bw = Vec::Zero(model.dim());
    for (const auto& s : samples)
      for (std::size_t k = 0; k < steps.size(); ++k) {
        if (steps[k] == 0 || steps[k] == opts.steps) continue;
        bw = bw.cwiseMax(silverman_bandwidth(s.values[k]));
      }
    bw *= opts.kde.bandwidth_scale;
  }
  KdeOptions fixed;
  fixed.bandwidth = bw;

  MixtureSeries out;
  out.times = eval_times;
  out.bandwidth = bw;
  out.budget = budget;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    QField q{grid, Vec::Zero(grid.size()), eval_times[k], Measure::phase_space};
    const auto pinned = pinned_mask(model.n(), steps[k], opts.steps);
    for (std::size_t i = 0; i < atoms; ++i)
      accumulate_kde(grid, samples[i].values[k], slice_bandwidth(samples[i].values[k], pinned, fixed),
                     p.atoms[i].weight, q.values);
    out.slices.push_back(std::move(q));
  }
  out.noise_model = "kde: " + std::to_string(atoms) + " atoms x " + std::to_string(budget) +
                    " paths, product Gaussian bandwidth " + fmt_vec(bw) + ", residual threshold is statistical";
  return out;
}

Vec gaussian_on_grid(const PhaseGrid& grid, const Vec& mean, const Mat& cov) {
  const int dims = grid.dims();
  require(mean.size() == dims && cov.rows() == dims && cov.cols() == dims, ErrorKind::dimension,
          "Gaussian does not match grid");
  const double scale = std::max(1e-300, cov.diagonal().cwiseAbs().maxCoeff());
  std::vector<int> free, exact;
  for (int a = 0; a < dims; ++a) (cov(a, a) > 1e-14 * scale ? free : exact).push_back(a);
  const int m = static_cast<int>(free.size());
  Mat sub(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) sub(i, j) = cov(free[i], free[j]);
  const Eigen::LLT<Mat> llt(sub);
  require(llt.info() == Eigen::Success, ErrorKind::dimension, "covariance is not positive definite on its support");
  const Mat l = llt.matrixL();
  const double log_norm = -0.5 * m * std::log(2 * M_PI) - l.diagonal().array().log().sum();
  std::vector<AxisWeights> delta(dims);
  for (int a : exact) delta[a] = axis_weights(grid.axis(a), mean[a], 0.0);
  Vec out = Vec::Zero(grid.size());
  Vec r(m);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const std::vector<int> idx = grid.unflatten(i);
    double w = 1.0;
    for (int a : exact) {
      const int off = idx[a] - delta[a].start;
      w *= (off >= 0 && off < static_cast<int>(delta[a].w.size())) ? delta[a].w[off] : 0.0;
    }
    if (w == 0.0) continue;
    for (int j = 0; j < m; ++j) r[j] = grid.axis(free[j]).coord(idx[free[j]]) - mean[free[j]];
    const Vec u = l.triangularView<Eigen::Lower>().solve(r);
    out[static_cast<Eigen::Index>(i)] = w * std::exp(log_norm - 0.5 * u.squaredNorm());
  }
  return out;
}

MixtureSeries gaussian_mixture_series(const DriftModel& model, const BoundaryDistribution& p,
                                      const std::vector<double>& eval_times, int steps, const PhaseGrid& grid,
                                      const std::optional<Vec>& smoothing) {
  check_grid(grid, model);
  p.validate(model.n());
  const auto bridge_times = uniform_times(p.t0, p.tf, steps);
  const auto idx = time_indices(bridge_times, eval_times);
  MixtureSeries out;
  out.times = eval_times;
  for (double t : eval_times) out.slices.push_back({grid, Vec::Zero(grid.size()), t, Measure::phase_space});
  std::vector<std::vector<Vec>> parts(p.atoms.size());
  parallel_for(p.atoms.size(), [&](std::size_t i) {
    const GaussianBridge gb = gaussian_bridge_exact(model, p.boundary(i), bridge_times);
    const DiscretePath mean = gb.mean_path();
    for (int k : idx) {
      Mat cov = gb.marginal_covariance(k);
      if (smoothing) {
        const auto pinned = pinned_mask(model.n(), k, steps);
        for (int a = 0; a < model.dim(); ++a)
          if (!pinned[a]) cov(a, a) += (*smoothing)[a] * (*smoothing)[a];
      }
      parts[i].push_back(gaussian_on_grid(grid, mean.values.col(k), cov));
    }
  });
  for (std::size_t i = 0; i < p.atoms.size(); ++i)
    for (std::size_t k = 0; k < idx.size(); ++k) out.slices[k].values += p.atoms[i].weight * parts[i][k];
  if (smoothing) out.bandwidth = *smoothing;
  out.noise_model = "exact Gaussian bridge marginals (" + std::to_string(steps) +
                    " steps): discretisation error only";
  return out;
}

bool MixtureResidualReport::all_pass() const {
  return !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const auto& r) { return r.pass; });
}

MixtureResidualReport mixture_fpe_residual(const MixtureSeries& series, const DriftModel& model,
                                           const MixtureResidualOptions& opts) {
  const std::size_t s = series.slices.size();
  require(s >= 3 && series.times.size() == s, ErrorKind::arity,
          "mixture residual needs at least three time slices for a centred derivative");
  const PhaseGrid& grid = series.slices[0].grid;
  check_grid(grid, model);
  const int n = model.n();
  Mat diff = Mat::Zero(model.dim(), model.dim());
  diff.topLeftCorner(n, n) = model.d() * Mat::Identity(n, n);
  diff.bottomRightCorner(n, n) = -model.d() * Mat::Identity(n, n);
  std::string noise = series.noise_model;
  if (series.bandwidth.size() > 0 && opts.correct_smoothing) {
    if (model.is_affine()) {
      // a Gaussian kernel of covariance B turns drift matrix M into an extra -(MB + BM') diffusion
      const Mat b = series.bandwidth.array().square().matrix().asDiagonal();
      const Mat& mm = model.linear_part();
      diff -= mm * b + b * mm.transpose();
      noise += "; diffusion corrected for kernel smoothing";
    } else {
      noise += "; no smoothing correction (non-affine drift)";
    }
  }
  const auto drift = [&](const Vec& p) { return model.drift(p); };
  const auto diffusion = [&](const Vec&) { return diff; };
  MixtureResidualReport rep;
  rep.noise_model = noise;
  for (std::size_t i = 0; i < s; ++i) {
    require(series.slices[i].grid == grid, ErrorKind::dimension, "mixture slices are on different grids");
  }
  for (std::size_t i = 1; i + 1 < s; ++i) {
    const double dt = series.times[i + 1] - series.times[i - 1];
    require(dt > 0.0, ErrorKind::config, "mixture times must increase");
    const Vec drho = (series.slices[i + 1].values - series.slices[i - 1].values) / dt;
    const Vec rhs = fokker_planck_rhs(grid, series.slices[i].values, drift, diffusion);
    double num = 0.0, a = 0.0, b = 0.0;
    for (std::size_t j = 0; j < grid.size(); ++j) {
      if (!grid.interior(j, opts.margin)) continue;
      const auto jj = static_cast<Eigen::Index>(j);
      num += (drho[jj] - rhs[jj]) * (drho[jj] - rhs[jj]);
      a += drho[jj] * drho[jj];
      b += rhs[jj] * rhs[jj];
    }
    MixtureResidualRow row;
    row.time = series.times[i];
    row.residual = std::sqrt(num / std::max(1e-300, std::max(a, b)));
    row.mass = series.slices[i].integral();
    for (std::size_t k : {i - 1, i + 1}) {
      const double m = series.slices[k].integral();
      if (std::abs(m - 1.0) > std::abs(row.mass - 1.0)) row.mass = m;
    }
    row.threshold = opts.threshold;
    row.pass = row.residual <= opts.threshold && std::abs(row.mass - 1.0) <= opts.mass_tolerance;
    rep.rows.push_back(row);
  }
  return rep;
}

void write_mixture_residual_csv(std::ostream& out, const MixtureResidualReport& report) {
  out << "time,residual,threshold,pass,mass\n";
  for (const auto& r : report.rows)
    out << fmt_num(r.time) << ',' << fmt_num(r.residual) << ',' << fmt_num(r.threshold) << ',' << (r.pass ? 1 : 0)
        << ',' << fmt_num(r.mass) << '\n';
  out << "# noise model: " << report.noise_model << '\n';
}

}  // namespace tsq
