#include "tsq/markov.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

namespace tsq {

std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::independent: return "independent";
    case Verdict::dependent: return "dependent";
    case Verdict::inconclusive: return "inconclusive";
  }
  return "?";
}

std::vector<int> MultiTimeJoint::find(const std::vector<VarRef>& refs) const {
  std::vector<int> out;
  for (const auto& r : refs) {
    auto it = std::find_if(vars.begin(), vars.end(),
                           [&](const VarRef& v) { return v.step == r.step && v.coord == r.coord; });
    require(it != vars.end(), ErrorKind::dimension,
            "variable (step " + std::to_string(r.step) + ", coord " + std::to_string(r.coord) + ") not in joint");
    out.push_back(static_cast<int>(it - vars.begin()));
  }
  return out;
}

namespace {

std::string var_name(const VarRef& v, int n, const std::vector<double>& times) {
  char buf[48];
  const char block = v.coord < n ? 'x' : 'y';
  std::snprintf(buf, sizeof buf, "%c%d@%.6g", block, v.coord % n + 1, times[v.step]);
  return buf;
}

void check_vars(const std::vector<VarRef>& vars, int n, int steps) {
  require(!vars.empty(), ErrorKind::config, "no variables requested");
  for (const auto& v : vars)
    require(v.step >= 0 && v.step <= steps && v.coord >= 0 && v.coord < 2 * n, ErrorKind::dimension,
            "variable outside the path grid");
}

void check_law(const GaussianBoundaryLaw& law, int n) {
  require(law.mean.size() == 2 * n && law.covariance.rows() == 2 * n && law.covariance.cols() == 2 * n,
          ErrorKind::dimension, "boundary law must be over (x0, yf)");
}

MultiTimeJoint empty_joint(const std::vector<double>& times, const std::vector<VarRef>& vars, int n, bool exact) {
  MultiTimeJoint j;
  j.times = times;
  j.vars = vars;
  j.exact = exact;
  for (const auto& v : vars) j.names.push_back(var_name(v, n, times));
  return j;
}

// Symmetric square root usable for semidefinite covariances.
Mat psd_factor(const Mat& cov) {
  const Eigen::SelfAdjointEigenSolver<Mat> es(cov);
  const Vec ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal();
}

Mat block(const Mat& m, const std::vector<int>& r, const std::vector<int>& c) {
  Mat out(r.size(), c.size());
  for (std::size_t i = 0; i < r.size(); ++i)
    for (std::size_t j = 0; j < c.size(); ++j) out(i, j) = m(r[i], c[j]);
  return out;
}

Vec subvec(const Vec& v, const std::vector<int>& r) {
  Vec out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = v[r[i]];
  return out;
}

}  // namespace

MultiTimeJoint gaussian_joint(const DriftModel& model, const GaussianBoundaryLaw& law,
                              const std::vector<double>& times, const std::vector<VarRef>& vars) {
  require(model.is_affine(), ErrorKind::unsupported_hamiltonian, "exact joint requires an affine drift");
  const int n = model.n();
  check_law(law, n);
  check_vars(vars, n, static_cast<int>(times.size()) - 1);
  const PathLaw pl = gaussian_path_law(model, times, law.mean, law.covariance);
  MultiTimeJoint j = empty_joint(times, vars, n, true);
  std::vector<int> idx;
  for (const auto& v : vars) idx.push_back(pl.index(v.step, v.coord));
  j.mean = subvec(pl.mean, idx);
  j.covariance = block(pl.covariance, idx, idx);
  return j;
}

MultiTimeJoint sampled_joint(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                             const std::vector<VarRef>& vars, int n_draws, std::uint64_t seed) {
  require(model.is_affine(), ErrorKind::unsupported_hamiltonian,
          "Gaussian boundary laws are sampled through the exact bridge; use an atom list for non-affine drifts");
  require(n_draws >= 2, ErrorKind::config, "need at least two draws");
  const int n = model.n();
  check_law(law, n);
  const int steps = static_cast<int>(times.size()) - 1;
  check_vars(vars, n, steps);
  const BridgeBoundary b0{times.front(), times.back(), law.mean.head(n), law.mean.tail(n)};
  const GaussianBridge gb = gaussian_bridge_exact(model, b0, times);
  const Mat lu = psd_factor(law.covariance);
  const Eigen::LLT<Mat> llt(gb.covariance);
  const Mat lz = llt.matrixL();
  MultiTimeJoint j = empty_joint(times, vars, n, false);
  j.seed = seed;
  j.samples.resize(static_cast<Eigen::Index>(vars.size()), n_draws);
  NormalSource src(make_stream(seed, 0));
  Vec xi_u(2 * n), xi_z(gb.mean.size());
  for (int d = 0; d < n_draws; ++d) {
    src.fill(xi_u);
    src.fill(xi_z);
    const Vec du = lu * xi_u;
    const Vec z = gb.mean + gb.gain * du + lz * xi_z;
    BridgeBoundary b = b0;
    b.x0 += du.head(n);
    b.yf += du.tail(n);
    const DiscretePath p = unpack_free(z, b, times, n);
    for (std::size_t v = 0; v < vars.size(); ++v) j.samples(static_cast<Eigen::Index>(v), d) = p.values(vars[v].coord, vars[v].step);
  }
  return j;
}

MultiTimeJoint sampled_joint(const DriftModel& model, const BoundaryDistribution& p, const std::vector<double>& times,
                             const std::vector<VarRef>& vars, int n_draws, std::uint64_t seed,
                             const SamplerConfig& sampler) {
  const int n = model.n();
  p.validate(n);
  require(std::abs(times.front() - p.t0) < 1e-12 && std::abs(times.back() - p.tf) < 1e-12, ErrorKind::config,
          "time grid does not span the boundary interval");
  check_vars(vars, n, static_cast<int>(times.size()) - 1);
  // largest-remainder allocation of draws to atoms
  const std::size_t atoms = p.atoms.size();
  std::vector<int> counts(atoms);
  std::vector<std::pair<double, std::size_t>> rem;
  int used = 0;
  for (std::size_t i = 0; i < atoms; ++i) {
    const double want = p.atoms[i].weight * n_draws;
    counts[i] = static_cast<int>(std::floor(want));
    used += counts[i];
    rem.push_back({want - counts[i], i});
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (int k = 0; used < n_draws; ++k, ++used) ++counts[rem[k % atoms].second];
  std::vector<Mat> parts(atoms);
  parallel_for(atoms, [&](std::size_t i) {
    if (counts[i] == 0) return;
    const BridgeEnsemble e = sample_bridges(model, p.boundary(i), times, counts[i], atom_seed(seed, i), sampler);
    parts[i].resize(static_cast<Eigen::Index>(vars.size()), counts[i]);
    for (std::size_t v = 0; v < vars.size(); ++v)
      parts[i].row(static_cast<Eigen::Index>(v)) = e.samples.row(vars[v].step * 2 * n + vars[v].coord);
  });
  MultiTimeJoint j = empty_joint(times, vars, n, false);
  j.seed = seed;
  j.samples.resize(static_cast<Eigen::Index>(vars.size()), n_draws);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < atoms; ++i) {
    if (counts[i] == 0) continue;
    j.samples.middleCols(col, counts[i]) = parts[i];
    col += counts[i];
  }
  return j;
}

// ---- conditional independence

namespace {

CITestResult exact_ci(const MultiTimeJoint& j, const std::vector<int>& a, const std::vector<int>& b,
                      const std::vector<int>& c, const CIOptions& opts) {
  Mat cross = block(j.covariance, a, b);
  Mat caa = block(j.covariance, a, a);
  Mat cbb = block(j.covariance, b, b);
  const Vec raw_a = caa.diagonal(), raw_b = cbb.diagonal();
  if (!c.empty()) {
    const Mat scc = block(j.covariance, c, c);
    const Mat sca = block(j.covariance, c, a), scb = block(j.covariance, c, b);
    const auto cod = scc.completeOrthogonalDecomposition();
    cross -= sca.transpose() * cod.solve(scb);
    caa -= sca.transpose() * cod.solve(sca);
    cbb -= scb.transpose() * cod.solve(scb);
  }
  double stat = 0.0;
  for (Eigen::Index i = 0; i < cross.rows(); ++i)
    for (Eigen::Index k = 0; k < cross.cols(); ++k) {
      // a variable fixed by the conditioning set carries no residual dependence
      if (caa(i, i) <= 1e-12 * std::max(raw_a[i], 1e-300) || cbb(k, k) <= 1e-12 * std::max(raw_b[k], 1e-300)) continue;
      const double r = cross(i, k) / std::sqrt(caa(i, i) * cbb(k, k));
      stat += r * r;
    }
  CITestResult r;
  r.statistic = std::sqrt(stat);
  r.threshold = opts.exact_threshold;
  r.method = "gaussian-exact";
  r.verdict = r.statistic < r.threshold ? Verdict::independent : Verdict::dependent;
  r.p_value = std::numeric_limits<double>::quiet_NaN();
  return r;
}

// Quantile bin of each entry among `idx` positions of `v`.
void quantile_bins(const Vec& v, const std::vector<int>& idx, int bins, std::vector<int>& out) {
  std::vector<int> order(idx);
  std::stable_sort(order.begin(), order.end(), [&](int p, int q) { return v[p] < v[q]; });
  const std::size_t m = order.size();
  for (std::size_t r = 0; r < m; ++r) out[order[r]] = static_cast<int>(r * bins / m);
}

// Polynomial features of the standardised columns of c (rows = draws).
Mat poly_features(const Mat& c, int degree) {
  const Eigen::Index n = c.rows(), k = c.cols();
  std::vector<Vec> cols{Vec::Ones(n)};
  std::vector<std::vector<int>> terms{{}};
  for (int deg = 1; deg <= degree; ++deg) {
    std::vector<std::vector<int>> next;
    for (const auto& t : terms) {
      if (static_cast<int>(t.size()) != deg - 1) continue;
      const int from = t.empty() ? 0 : t.back();
      for (int j = from; j < k; ++j) {
        auto u = t;
        u.push_back(j);
        next.push_back(u);
      }
    }
    for (const auto& t : next) {
      Vec col = Vec::Ones(n);
      for (int j : t) col.array() *= c.col(j).array();
      cols.push_back(col);
      terms.push_back(t);
    }
  }
  Mat f(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) f.col(static_cast<Eigen::Index>(i)) = cols[i];
  return f;
}

// Plug-in conditional mutual information of categorical a, b given cell.
double binned_cmi(const std::vector<int>& a, const std::vector<int>& b, const std::vector<int>& cell, int na, int nb,
                  int ncell) {
  std::vector<double> joint(static_cast<std::size_t>(ncell) * na * nb, 0.0), pa(static_cast<std::size_t>(ncell) * na, 0.0),
      pb(static_cast<std::size_t>(ncell) * nb, 0.0), pc(ncell, 0.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[(static_cast<std::size_t>(cell[i]) * na + a[i]) * nb + b[i]] += 1;
    pa[static_cast<std::size_t>(cell[i]) * na + a[i]] += 1;
    pb[static_cast<std::size_t>(cell[i]) * nb + b[i]] += 1;
    pc[cell[i]] += 1;
  }
  const double total = static_cast<double>(a.size());
  double cmi = 0.0;
  for (int c = 0; c < ncell; ++c)
    for (int i = 0; i < na; ++i)
      for (int k = 0; k < nb; ++k) {
        const double nabc = joint[(static_cast<std::size_t>(c) * na + i) * nb + k];
        if (nabc == 0) continue;
        cmi += nabc / total *
               std::log(nabc * pc[c] / (pa[static_cast<std::size_t>(c) * na + i] * pb[static_cast<std::size_t>(c) * nb + k]));
      }
  return cmi;
}

CITestResult sampled_ci(const MultiTimeJoint& j, const std::vector<int>& a, const std::vector<int>& b,
                        const std::vector<int>& c_all, const CIOptions& opts) {
  const Mat x = j.samples.transpose();  // draws x vars
  const Eigen::Index n = x.rows();
  CITestResult r;
  r.method = "permutation";
  r.n_samples = n;
  // drop conditioning variables that do not vary (pinned boundary data)
  std::vector<int> c;
  for (int v : c_all) {
    const Vec col = x.col(v);
    const double sd = std::sqrt((col.array() - col.mean()).square().mean());
    if (sd > 1e-12 * std::max(1.0, std::abs(col.mean()))) c.push_back(v);
  }
  Mat cm(n, static_cast<Eigen::Index>(c.size()));
  for (std::size_t i = 0; i < c.size(); ++i) {
    const Vec col = x.col(c[i]);
    const double mu = col.mean();
    const double sd = std::sqrt((col.array() - mu).square().mean());
    cm.col(static_cast<Eigen::Index>(i)) = (col.array() - mu) / sd;
  }
  const Mat f = poly_features(cm, c.empty() ? 0 : opts.poly_degree);
  const auto qr = f.colPivHouseholderQr();
  auto residual = [&](int v) -> Vec {
    const Vec y = x.col(v);
    return y - f * qr.solve(y);
  };
  // conditioning cells: quantile bins on the leading principal components of the conditioning
  // set, so correlated or many conditioning variables do not leave empty cells
  Mat scores;
  if (!c.empty()) {
    const Eigen::SelfAdjointEigenSolver<Mat> es(cm.transpose() * cm / static_cast<double>(n));
    const auto k = std::min<Eigen::Index>(cm.cols(), opts.max_cell_dims);
    scores = cm * es.eigenvectors().rightCols(k);
  }
  std::vector<int> cell(n, 0), tmp(n);
  int ncell = 1;
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (Eigen::Index i = 0; i < scores.cols(); ++i) {
    quantile_bins(scores.col(i), all, opts.cond_bins, tmp);
    for (Eigen::Index d = 0; d < n; ++d) cell[d] = cell[d] * opts.cond_bins + tmp[d];
    ncell *= opts.cond_bins;
  }
  std::vector<std::vector<int>> members(ncell);
  for (Eigen::Index d = 0; d < n; ++d) members[cell[d]].push_back(static_cast<int>(d));
  int smallest = static_cast<int>(n);
  for (const auto& m : members) smallest = std::min(smallest, static_cast<int>(m.size()));
  if (smallest < opts.min_cell) {
    r.verdict = Verdict::inconclusive;
    r.note = "conditioning cell with " + std::to_string(smallest) + " draws (< " + std::to_string(opts.min_cell) + ")";
    r.statistic = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  // categorical codes of the residuals, binned within each cell
  auto codes = [&](const std::vector<int>& vars, int& levels) {
    std::vector<int> code(n, 0);
    levels = 1;
    for (int v : vars) {
      const Vec res = residual(v);
      for (const auto& m : members) quantile_bins(res, m, opts.value_bins, tmp);
      for (Eigen::Index d = 0; d < n; ++d) code[d] = code[d] * opts.value_bins + tmp[d];
      levels *= opts.value_bins;
    }
    return code;
  };
  int na = 0, nb = 0;
  const std::vector<int> ca = codes(a, na);
  std::vector<int> cb = codes(b, nb);
  r.statistic = binned_cmi(ca, cb, cell, na, nb, ncell);
  // permutation null: shuffle b codes within each conditioning cell
  std::mt19937_64 eng = make_stream(opts.seed, 77);
  std::vector<double> null;
  int exceed = 0;
  for (int p = 0; p < opts.permutations; ++p) {
    for (const auto& m : members)
      for (std::size_t i = m.size() - 1; i > 0; --i) {
        const std::size_t k = eng() % (i + 1);
        std::swap(cb[m[i]], cb[m[k]]);
      }
    const double v = binned_cmi(ca, cb, cell, na, nb, ncell);
    null.push_back(v);
    if (v >= r.statistic) ++exceed;
  }
  std::sort(null.begin(), null.end());
  r.threshold = null[std::min(null.size() - 1, static_cast<std::size_t>(std::ceil((1.0 - opts.alpha) * null.size())) - 1)];
  r.p_value = (1.0 + exceed) / (1.0 + opts.permutations);
  r.verdict = r.p_value <= opts.alpha ? Verdict::dependent : Verdict::independent;
  return r;
}

}  // namespace

CITestResult conditional_independence(const MultiTimeJoint& joint, const std::vector<int>& a,
                                      const std::vector<int>& b, const std::vector<int>& c, const CIOptions& opts) {
  require(!a.empty() && !b.empty(), ErrorKind::arity, "independence test needs two nonempty variable sets");
  for (const auto* set : {&a, &b, &c})
    for (int v : *set) require(v >= 0 && v < joint.size(), ErrorKind::dimension, "variable index outside the joint");
  if (joint.exact) return exact_ci(joint, a, b, c, opts);
  require(joint.samples.cols() >= 2, ErrorKind::arity, "sampled joint has no draws");
  return sampled_ci(joint, a, b, c, opts);
}

std::vector<VarRef> screening_vars(int n, int k1, int k2, int k3) {
  std::vector<VarRef> v;
  for (int c = 0; c < n; ++c) v.push_back({k1, c});
  for (int c = 0; c < n; ++c) v.push_back({k3, n + c});
  for (int c = 0; c < n; ++c) v.push_back({k2, c});
  for (int c = 0; c < n; ++c) v.push_back({k2, n + c});
  return v;
}

CITestResult markov_screening_test(const MultiTimeJoint& joint, const CIOptions& opts) {
  require(joint.size() % 4 == 0 && joint.size() > 0, ErrorKind::arity,
          "screening test expects the joint over (x1, y3, x2, y2)");
  const int n = joint.size() / 4;
  std::vector<int> a(n), b(n), c(2 * n);
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), n);
  std::iota(c.begin(), c.end(), 2 * n);
  return conditional_independence(joint, a, b, c, opts);
}

// ---- F / G / Z

namespace {

struct SegmentKernel {
  // free endpoint of the segment: mean = m0 + g . (pinned x, pinned y), variance v
  double m0 = 0.0;
  Vec g;
  double var = 0.0;
};

// Exact law of one free endpoint coordinate of the segment bridge on times[lo..hi].
// want_x_end: the x value at the segment end (for F); otherwise the y value at its start (G).
SegmentKernel segment_kernel(const DriftModel& model, const std::vector<double>& times, int lo, int hi,
                             bool want_x_end) {
  require(hi - lo >= 2, ErrorKind::refinement, "each F/G segment needs at least two bridge steps");
  const std::vector<double> seg(times.begin() + lo, times.begin() + hi + 1);
  const BridgeBoundary b{seg.front(), seg.back(), Vec::Zero(1), Vec::Zero(1)};
  const GaussianBridge gb = gaussian_bridge_exact(model, b, seg);
  const Eigen::Index i = want_x_end ? gb.mean.size() - 1 : 0;  // z = [y_0 | ... | x_K]
  SegmentKernel k;
  k.m0 = gb.mean[i];
  k.g = gb.gain.row(i).transpose();
  k.var = gb.covariance(i, i);
  return k;
}

double normal_pdf(double x, double m, double v) { return std::exp(-0.5 * (x - m) * (x - m) / v) / std::sqrt(2 * M_PI * v); }

}  // namespace

double fgz_log_z(const DriftModel& model, const std::vector<double>& times, int k2, double x1, double y3,
                 const FgzOptions& opts, FgzResult* keep) {
  require(model.n() == 1 && model.is_affine(), ErrorKind::unsupported_hamiltonian,
          "F/G/Z tabulation supports one mode with affine drift");
  const int steps = static_cast<int>(times.size()) - 1;
  const SegmentKernel f = segment_kernel(model, times, 0, k2, true);
  const SegmentKernel g = segment_kernel(model, times, k2, steps, false);
  // grid placed on the full-bridge marginal of (x2, y2); it only fixes where the quadrature looks
  const BridgeBoundary full{times.front(), times.back(), Vec::Constant(1, x1), Vec::Constant(1, y3)};
  const GaussianBridge gb = gaussian_bridge_exact(model, full, times);
  const Vec m = gb.marginal_mean(k2);
  const Mat c = gb.marginal_covariance(k2);
  std::vector<GridAxis> axes;
  for (int a = 0; a < 2; ++a) {
    const double half = opts.half_width * std::sqrt(c(a, a));
    axes.push_back({m[a] - half, 2 * half / (opts.points - 1), opts.points, a == 0 ? "x2" : "y2"});
  }
  const PhaseGrid grid(axes);
  Vec fv(grid.size()), gv(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Vec p = grid.point(i);
    fv[static_cast<Eigen::Index>(i)] = normal_pdf(p[0], f.m0 + f.g[0] * x1 + f.g[1] * p[1], f.var);
    gv[static_cast<Eigen::Index>(i)] = normal_pdf(p[1], g.m0 + g.g[0] * p[0] + g.g[1] * y3, g.var);
  }
  const double z = fv.cwiseProduct(gv).sum() * grid.cell_volume();
  require(z > 0.0 && std::isfinite(z), ErrorKind::refinement, "Z quadrature underflowed; widen the F/G grid");
  // mass near the edge means the window is too small
  double edge = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    if (!grid.interior(i, 1)) edge += fv[static_cast<Eigen::Index>(i)] * gv[static_cast<Eigen::Index>(i)];
  require(edge * grid.cell_volume() <= 1e-10 * z, ErrorKind::refinement,
          "F*G mass reaches the quadrature window edge; increase half_width");
  if (keep) {
    keep->grid = grid;
    keep->f = fv;
    keep->g = gv;
    keep->z = z;
    keep->center = Vec(2);
    keep->center << x1, y3;
    keep->k2 = k2;
  }
  return std::log(z);
}

Mat pin_log_mixed(const GaussianBoundaryLaw& law) {
  const int n = static_cast<int>(law.mean.size() / 2);
  const Mat prec = law.covariance.inverse();
  return -prec.topRightCorner(n, n);
}

FgzResult fgz_decomposition(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                            int k2, const FgzOptions& opts, double tol) {
  check_law(law, 1);
  FgzResult r;
  const double x1 = law.mean[0], y3 = law.mean[1], h = opts.probe;
  fgz_log_z(model, times, k2, x1, y3, opts, &r);
  const double pp = fgz_log_z(model, times, k2, x1 + h, y3 + h, opts);
  const double pm = fgz_log_z(model, times, k2, x1 + h, y3 - h, opts);
  const double mp = fgz_log_z(model, times, k2, x1 - h, y3 + h, opts);
  const double mm = fgz_log_z(model, times, k2, x1 - h, y3 - h, opts);
  r.log_z_mixed = (pp - pm - mp + mm) / (4 * h * h);
  r.log_pin_mixed = pin_log_mixed(law)(0, 0);
  r.factorization_statistic = std::abs(r.log_pin_mixed - r.log_z_mixed);
  r.factorizes = r.factorization_statistic < tol;
  return r;
}

double fgz_joint_density(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                         int k2, const Vec& point, const FgzOptions& opts) {
  check_law(law, 1);
  require(point.size() == 4, ErrorKind::dimension, "point must be (x1, y3, x2, y2)");
  const int steps = static_cast<int>(times.size()) - 1;
  const SegmentKernel f = segment_kernel(model, times, 0, k2, true);
  const SegmentKernel g = segment_kernel(model, times, k2, steps, false);
  const double x1 = point[0], y3 = point[1], x2 = point[2], y2 = point[3];
  const double fv = normal_pdf(x2, f.m0 + f.g[0] * x1 + f.g[1] * y2, f.var);
  const double gv = normal_pdf(y2, g.m0 + g.g[0] * x2 + g.g[1] * y3, g.var);
  const double z = std::exp(fgz_log_z(model, times, k2, x1, y3, opts));
  const Vec u = point.head(2) - law.mean;
  const Eigen::LLT<Mat> llt(law.covariance);
  const Mat l = llt.matrixL();
  const Vec w = l.triangularView<Eigen::Lower>().solve(u);
  const double pin = std::exp(-0.5 * w.squaredNorm()) / (2 * M_PI * l.diagonal().prod());
  return pin * fv * gv / z;
}

// ---- Bernstein and interior shielding

std::vector<VarRef> bernstein_vars(int n, int steps, int k1, int k2, int k3) {
  require(0 < k1 && k1 < k2 && k2 < k3 && k3 < steps, ErrorKind::config, "need 0 < t1 < t2 < t3 < tf on the grid");
  std::vector<VarRef> v;
  for (int k : {k1, k2, k3, 0, steps})
    for (int c = 0; c < 2 * n; ++c) v.push_back({k, c});
  return v;
}

namespace {

std::vector<int> refs(const MultiTimeJoint& j, int n, int step, bool x, bool y) {
  std::vector<VarRef> r;
  for (int c = 0; c < n; ++c) {
    if (x) r.push_back({step, c});
    if (y) r.push_back({step, n + c});
  }
  return j.find(r);
}

void append(std::vector<int>& a, const std::vector<int>& b) { a.insert(a.end(), b.begin(), b.end()); }

int last_step(const MultiTimeJoint& j) { return static_cast<int>(j.times.size()) - 1; }

}  // namespace

CITestResult bernstein_test(const MultiTimeJoint& joint, int n, int k1, int k2, int k3, BernsteinMode mode,
                            const CIOptions& opts) {
  const int steps = last_step(joint);
  require(0 < k1 && k1 < k2 && k2 < k3 && k3 < steps, ErrorKind::config, "need 0 < t1 < t2 < t3 < tf on the grid");
  const auto a = refs(joint, n, k1, true, true);
  const auto b = refs(joint, n, k3, true, true);
  std::vector<int> c;
  switch (mode) {
    case BernsteinMode::mixed_endpoints:
      append(c, refs(joint, n, k2, true, true));
      append(c, refs(joint, n, 0, true, false));
      append(c, refs(joint, n, steps, false, true));
      break;
    case BernsteinMode::full_endpoints:
      append(c, refs(joint, n, k2, true, true));
      append(c, refs(joint, n, 0, true, true));
      append(c, refs(joint, n, steps, true, true));
      break;
    case BernsteinMode::partial_x:
      append(c, refs(joint, n, k2, true, false));
      append(c, refs(joint, n, 0, true, false));
      append(c, refs(joint, n, steps, false, true));
      break;
  }
  return conditional_independence(joint, a, b, c, opts);
}

CITestResult interior_shielding_test(const MultiTimeJoint& joint, int n, int k1, int k2, int k3, bool partial,
                                     const CIOptions& opts) {
  const int steps = last_step(joint);
  require(0 < k1 && k1 < k2 && k2 < k3 && k3 < steps, ErrorKind::config, "need 0 < t1 < t2 < t3 < tf on the grid");
  const auto a = refs(joint, n, k2, true, true);
  std::vector<int> b = refs(joint, n, 0, true, true);
  append(b, refs(joint, n, steps, true, true));
  std::vector<int> c = refs(joint, n, k1, true, !partial);
  append(c, refs(joint, n, k3, true, !partial));
  return conditional_independence(joint, a, b, c, opts);
}

// ---- lambda mediation

GaussianConditional exact_conditional(const MultiTimeJoint& j, const std::vector<int>& given,
                                      const std::vector<int>& target) {
  require(j.exact, ErrorKind::config, "exact conditional needs an exact joint");
  const Mat sgg = block(j.covariance, given, given);
  const Mat stg = block(j.covariance, target, given);
  const auto cod = sgg.completeOrthogonalDecomposition();
  GaussianConditional c;
  c.gain = cod.solve(stg.transpose()).transpose();
  c.mean0 = subvec(j.mean, target) - c.gain * subvec(j.mean, given);
  c.covariance = block(j.covariance, target, target) - c.gain * stg.transpose();
  c.covariance = 0.5 * (c.covariance + c.covariance.transpose()).eval();
  return c;
}

GaussianConditional fitted_conditional(const MultiTimeJoint& j, const std::vector<int>& given,
                                       const std::vector<int>& target) {
  require(!j.exact, ErrorKind::config, "fitted conditional needs samples");
  const Eigen::Index n = j.samples.cols();
  Mat design(n, static_cast<Eigen::Index>(given.size()) + 1);
  design.col(0).setOnes();
  for (std::size_t i = 0; i < given.size(); ++i) design.col(static_cast<Eigen::Index>(i) + 1) = j.samples.row(given[i]).transpose();
  Mat y(n, static_cast<Eigen::Index>(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) y.col(static_cast<Eigen::Index>(i)) = j.samples.row(target[i]).transpose();
  const Mat beta = design.colPivHouseholderQr().solve(y);
  const Mat res = y - design * beta;
  GaussianConditional c;
  c.mean0 = beta.row(0).transpose();
  c.gain = beta.bottomRows(static_cast<Eigen::Index>(given.size())).transpose();
  c.covariance = res.transpose() * res / static_cast<double>(n - design.cols());
  return c;
}

double gaussian_tv(const Vec& m1, const Mat& c1, const Vec& m2, const Mat& c2, int points) {
  const int dim = static_cast<int>(m1.size());
  require(dim >= 1 && dim <= 4, ErrorKind::dimension, "TV quadrature supports 1 to 4 dimensions");
  if (dim > 2) points = std::min(points, 41);
  std::vector<GridAxis> axes;
  for (int a = 0; a < dim; ++a) {
    const double s1 = std::sqrt(c1(a, a)), s2 = std::sqrt(c2(a, a));
    const double lo = std::min(m1[a] - 7 * s1, m2[a] - 7 * s2);
    const double hi = std::max(m1[a] + 7 * s1, m2[a] + 7 * s2);
    axes.push_back({lo, (hi - lo) / (points - 1), points, "t" + std::to_string(a)});
  }
  const PhaseGrid g(axes);
  const Vec p = gaussian_on_grid(g, m1, c1);
  const Vec q = gaussian_on_grid(g, m2, c2);
  return std::min(1.0, 0.5 * (p - q).cwiseAbs().sum() * g.cell_volume());
}

namespace {

double sup_tv(const GaussianConditional& a, const GaussianConditional& b, const std::vector<Vec>& probes) {
  double worst = 0.0;
  for (const auto& p : probes) worst = std::max(worst, gaussian_tv(a.mean_at(p), a.covariance, b.mean_at(p), b.covariance));
  return worst;
}

// Probe points between the two preparations' marginals of the conditioning variables.
std::vector<Vec> make_probes(const MultiTimeJoint& j1, const MultiTimeJoint& j2, const std::vector<int>& given,
                             int count) {
  auto moments = [&](const MultiTimeJoint& j, Vec& m, Mat& c) {
    if (j.exact) {
      m = subvec(j.mean, given);
      c = block(j.covariance, given, given);
    } else {
      Mat s(given.size(), j.samples.cols());
      for (std::size_t i = 0; i < given.size(); ++i) s.row(static_cast<Eigen::Index>(i)) = j.samples.row(given[i]);
      m = s.rowwise().mean();
      const Mat d = s.colwise() - m;
      c = d * d.transpose() / static_cast<double>(s.cols() - 1);
    }
  };
  Vec m1, m2;
  Mat c1, c2;
  moments(j1, m1, c1);
  moments(j2, m2, c2);
  const Vec center = 0.5 * (m1 + m2);
  const Vec sd = (0.5 * (c1.diagonal() + c2.diagonal())).cwiseSqrt();
  std::vector<Vec> probes{center};
  for (int k = 1; static_cast<int>(probes.size()) < count; ++k) {
    const int axis = (k - 1) / 2 % static_cast<int>(given.size());
    const double sign = (k % 2) ? 1.0 : -1.0;
    Vec p = center;
    p[axis] += sign * 0.5 * sd[axis];
    probes.push_back(p);
  }
  // both preparations must put mass near every probe
  for (const auto& p : probes)
    for (const auto* mc : {&m1, &m2}) {
      const Mat& c = (mc == &m1) ? c1 : c2;
      const Vec d = p - *mc;
      const double maha = std::sqrt(d.dot(c.completeOrthogonalDecomposition().solve(d)));
      require(maha < 4.0, ErrorKind::undefined_comparison,
              "preparations have (numerically) disjoint support at the conditioning time; comparison undefined");
    }
  return probes;
}

}  // namespace

LambdaReport lambda_mediation_test(const DriftModel& model, const GaussianBoundaryLaw& r1,
                                   const GaussianBoundaryLaw& r2, const std::vector<double>& times,
                                   std::uint64_t seed, const LambdaOptions& opts) {
  const int n = model.n();
  const int steps = static_cast<int>(times.size()) - 1;
  // [x(t0) | y(t0) | x(tf) | y(tf)]
  std::vector<VarRef> vars;
  for (int k : {0, steps})
    for (int c = 0; c < 2 * n; ++c) vars.push_back({k, c});
  std::vector<int> phi1, phi2, kgiven, ktarget;
  for (int c = 0; c < 2 * n; ++c) {
    phi1.push_back(c);
    phi2.push_back(2 * n + c);
  }
  for (int c = 0; c < n; ++c) {
    kgiven.push_back(c);               // x(t0)
    ktarget.push_back(2 * n + c);      // x(tf)
  }
  for (int c = 0; c < n; ++c) {
    kgiven.push_back(3 * n + c);       // y(tf)
    ktarget.push_back(n + c);          // y(t0)
  }
  LambdaReport rep;
  rep.exact = opts.exact;
  if (opts.exact) {
    const MultiTimeJoint j1 = gaussian_joint(model, r1, times, vars);
    const MultiTimeJoint j2 = gaussian_joint(model, r2, times, vars);
    rep.probes = make_probes(j1, j2, phi1, opts.probes);
    rep.oriented_tv = sup_tv(exact_conditional(j1, phi1, phi2), exact_conditional(j2, phi1, phi2), rep.probes);
    const auto kp = make_probes(j1, j2, kgiven, opts.probes);
    rep.kernel_tv = sup_tv(exact_conditional(j1, kgiven, ktarget), exact_conditional(j2, kgiven, ktarget), kp);
    rep.noise = 1e-9;  // quadrature floor
    rep.oriented_noise = rep.noise;
    return rep;
  }
  require(opts.replicates >= 2, ErrorKind::config, "noise estimate needs at least two replicates");
  const MultiTimeJoint j1 = sampled_joint(model, r1, times, vars, opts.n_draws, make_stream(seed, 1)());
  const MultiTimeJoint j2 = sampled_joint(model, r2, times, vars, opts.n_draws, make_stream(seed, 2)());
  rep.probes = make_probes(j1, j2, phi1, opts.probes);
  const auto kp = make_probes(j1, j2, kgiven, opts.probes);
  rep.oriented_tv = sup_tv(fitted_conditional(j1, phi1, phi2), fitted_conditional(j2, phi1, phi2), rep.probes);
  rep.kernel_tv = sup_tv(fitted_conditional(j1, kgiven, ktarget), fitted_conditional(j2, kgiven, ktarget), kp);
  // estimation noise: the same distances between independent replicates of one preparation
  std::vector<double> same, same_oriented;
  for (int r = 0; r < opts.replicates; ++r) {
    const MultiTimeJoint a = sampled_joint(model, r1, times, vars, opts.n_draws, make_stream(seed, 100 + 2 * r)());
    const MultiTimeJoint b = sampled_joint(model, r1, times, vars, opts.n_draws, make_stream(seed, 101 + 2 * r)());
    same.push_back(sup_tv(fitted_conditional(a, kgiven, ktarget), fitted_conditional(b, kgiven, ktarget), kp));
    same_oriented.push_back(sup_tv(fitted_conditional(a, phi1, phi2), fitted_conditional(b, phi1, phi2), rep.probes));
  }
  auto level = [](const std::vector<double>& v) {
    const double m = std::accumulate(v.begin(), v.end(), 0.0) / v.size();
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return m + 3.0 * std::sqrt(s / (v.size() - 1));
  };
  std::vector<double> pooled(same);
  pooled.insert(pooled.end(), same_oriented.begin(), same_oriented.end());
  rep.noise = level(pooled);
  rep.oriented_noise = level(same_oriented);
  return rep;
}

void write_verdict_header(std::ostream& out) {
  out << "instance_id,test,statistic,threshold,verdict,backend,n_samples,seed\n";
}

void write_verdict_row(std::ostream& out, const std::string& instance, const std::string& test,
                       const CITestResult& r, std::uint64_t seed) {
  out << instance << ',' << test << ',' << fmt_num(r.statistic) << ',' << fmt_num(r.threshold) << ','
      << to_string(r.verdict) << ',' << r.method << ',' << r.n_samples << ',' << seed << '\n';
}

}  // namespace tsq
