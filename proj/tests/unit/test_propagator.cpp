#include <cmath>
#include <sstream>

#include "doctest.h"
#include "tsq/propagator.hpp"

using namespace tsq;

namespace {

DriftModel frame_model() {
  Mat m(2, 2);
  m << -0.5, 0.0, 0.0, 0.5;
  return DriftModel::affine(m, Vec::Zero(2), 0.5);
}

BoundaryDistribution grid_atoms(double t0, double tf) {
  BoundaryDistribution p;
  p.t0 = t0;
  p.tf = tf;
  for (double x0 : {-0.5, 0.0, 0.5})
    for (double yf : {-0.4, 0.05, 0.5}) p.atoms.push_back({Vec::Constant(1, x0), Vec::Constant(1, yf), 1.0 / 9});
  return p;
}

double tv(const QField& a, const Vec& b) { return 0.5 * (a.values - b).cwiseAbs().sum() * a.grid.cell_volume(); }

Vec moments(const QField& q) {
  Vec m = Vec::Zero(4);
  for (std::size_t i = 0; i < q.grid.size(); ++i) {
    const Vec p = q.grid.point(i);
    const double w = q.values[static_cast<Eigen::Index>(i)] * q.grid.cell_volume();
    m[0] += w * p[0];
    m[1] += w * p[1];
    m[2] += w * p[0] * p[0];
    m[3] += w * p[1] * p[1];
  }
  return m;
}

}  // namespace

TEST_CASE("boundary distributions validate") {
  BoundaryDistribution p = grid_atoms(0.0, 1.0);
  CHECK_NOTHROW(p.validate(1));
  CHECK_THROWS_AS(p.validate(2), Error);
  p.atoms[0].weight = 0.5;
  CHECK_THROWS_AS(p.validate(1), Error);
  p = grid_atoms(0.0, 1.0);
  p.atoms[1].weight = -p.atoms[1].weight;
  p.atoms[0].weight += 2.0 / 9;
  CHECK_THROWS_AS(p.validate(1), Error);
  CHECK_THROWS_AS(BoundaryDistribution{}.validate(1), Error);
  CHECK(BoundaryDistribution::single(0.0, 1.0, Vec::Ones(1), Vec::Zero(1)).atoms.size() == 1);
}

TEST_CASE("evaluation times must be on the bridge grid") {
  const auto times = uniform_times(0.0, 1.0, 8);
  CHECK(time_indices(times, {0.0, 0.5, 1.0}) == std::vector<int>{0, 4, 8});
  CHECK_THROWS_AS(time_indices(times, {0.3}), Error);
  CHECK_THROWS_AS(time_indices(times, {1.5}), Error);
}

TEST_CASE("zero drift propagator is Brownian in x and backward Brownian in y") {
  const double d = 0.5;
  const DriftModel free = DriftModel::zero(1, d);
  const BridgeBoundary b{0.0, 1.0, Vec::Constant(1, 0.3), Vec::Constant(1, -0.2)};
  const PhaseGrid grid = PhaseGrid::uniform(2, -4.0, 4.0, 0.05);
  TspOptions opts;
  opts.steps = 16;
  const auto est = estimate_tsp(free, b, {0.0, 0.25, 0.5}, 10000, 3, grid, opts);
  REQUIRE(est.slices.size() == 3);
  // x is pinned at t0: deposited exactly
  CHECK(est.bandwidths[0][0] == 0.0);
  CHECK(est.slices[0].integral() == doctest::Approx(1.0).epsilon(1e-9));
  const Vec m0 = moments(est.slices[0]);
  CHECK(m0[0] == doctest::Approx(0.3).epsilon(1e-9));
  CHECK(m0[2] - m0[0] * m0[0] < 1e-3);
  for (int s : {1, 2}) {
    const double t = est.times[s];
    const Vec bw = est.bandwidths[s];
    const Vec m = moments(est.slices[s]);
    CHECK(std::abs(m[0] - 0.3) < 0.03);
    CHECK(std::abs(m[1] + 0.2) < 0.03);
    CHECK(m[2] - m[0] * m[0] == doctest::Approx(d * t + bw[0] * bw[0]).epsilon(0.05));
    CHECK(m[3] - m[1] * m[1] == doctest::Approx(d * (1.0 - t) + bw[1] * bw[1]).epsilon(0.05));
    Mat cov = Mat::Zero(2, 2);
    cov(0, 0) = d * t + bw[0] * bw[0];
    cov(1, 1) = d * (1.0 - t) + bw[1] * bw[1];
    CHECK(tv(est.slices[s], gaussian_on_grid(grid, (Vec(2) << 0.3, -0.2).finished(), cov)) < 0.05);
  }
  CHECK(est.min_ess >= 0.1 * 10000);
  CHECK_THROWS_AS(estimate_tsp(free, b, {0.3}, 100, 3, grid, opts), Error);
}

TEST_CASE("KDE propagator agrees with the smoothed exact marginal") {
  const DriftModel model = frame_model();
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.05);
  const BoundaryDistribution p = BoundaryDistribution::single(0.0, 1.0, Vec::Constant(1, 0.4), Vec::Constant(1, -0.3));
  TspOptions opts;
  opts.steps = 32;
  const MixtureSeries kde = mix_over_boundaries(model, p, {0.25, 0.5, 0.75}, 10000, 8, grid, opts);
  REQUIRE(kde.bandwidth.size() == 2);
  const MixtureSeries exact = gaussian_mixture_series(model, p, {0.25, 0.5, 0.75}, 32, grid, kde.bandwidth);
  for (std::size_t s = 0; s < 3; ++s) CHECK(tv(kde.slices[s], exact.slices[s].values) < 0.05);
  // a single atom mixture is the propagator estimate with the same bandwidth and seed
  TspOptions fixed = opts;
  fixed.kde.bandwidth = kde.bandwidth;
  const auto est = estimate_tsp(model, p.boundary(0), {0.25, 0.5, 0.75}, 10000, atom_seed(8, 0), grid, fixed);
  for (std::size_t s = 0; s < 3; ++s) CHECK((est.slices[s].values - kde.slices[s].values).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("mirror-symmetric atoms give an even mixture") {
  const DriftModel model = frame_model();
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.1);
  BoundaryDistribution p;
  p.t0 = 0.0;
  p.tf = 1.0;
  p.atoms = {{Vec::Constant(1, 0.5), Vec::Constant(1, 0.3), 0.5}, {Vec::Constant(1, -0.5), Vec::Constant(1, -0.3), 0.5}};
  const auto s = gaussian_mixture_series(model, p, {0.5}, 16, grid);
  const Vec& v = s.slices[0].values;
  // point reflection (x, y) -> (-x, -y) maps flat index i to size-1-i on a symmetric grid
  const auto n = static_cast<Eigen::Index>(grid.size());
  double worst = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) worst = std::max(worst, std::abs(v[i] - v[n - 1 - i]));
  CHECK(worst < 1e-10 * v.maxCoeff());
}

TEST_CASE("exact slices satisfy the Fokker-Planck equation") {
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.05);
  const int steps = 128;
  const double dt = 1.0 / steps;
  const std::vector<double> around{0.5 - dt, 0.5, 0.5 + dt};
  MixtureResidualOptions tight;
  tight.threshold = 1e-3;
  SUBCASE("squeezing frame, nine atoms") {
    const auto s = gaussian_mixture_series(frame_model(), grid_atoms(0.0, 1.0), around, steps, grid);
    const auto rep = mixture_fpe_residual(s, frame_model(), tight);
    REQUIRE(rep.rows.size() == 1);
    CHECK(rep.rows[0].residual <= 1e-3);
    CHECK(rep.all_pass());
    // the same series with 10% of one slice moved elsewhere fails
    auto bad = s;
    bad.slices[2].values = 0.9 * s.slices[2].values + 0.1 * s.slices[0].values.reverse();
    CHECK(!mixture_fpe_residual(bad, frame_model(), tight).all_pass());
  }
  SUBCASE("heat kernel") {
    const DriftModel free = DriftModel::zero(1, 0.5);
    const auto s = gaussian_mixture_series(free, grid_atoms(0.0, 1.0), around, steps, grid);
    CHECK(mixture_fpe_residual(s, free, tight).all_pass());
  }
}

TEST_CASE("residual needs three slices and reports its noise model") {
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.1);
  const auto s = gaussian_mixture_series(frame_model(), grid_atoms(0.0, 1.0), {0.5, 0.5 + 1.0 / 16}, 16, grid);
  try {
    (void)mixture_fpe_residual(s, frame_model());
    FAIL("expected arity error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::arity);
  }
  const auto three = gaussian_mixture_series(frame_model(), grid_atoms(0.0, 1.0), {0.25, 0.5, 0.75}, 16, grid);
  std::ostringstream out;
  write_mixture_residual_csv(out, mixture_fpe_residual(three, frame_model()));
  CHECK(out.str().find("time,residual,threshold,pass,mass") != std::string::npos);
  CHECK(out.str().find("# noise model:") != std::string::npos);
}

TEST_CASE("mixtures are linear in the atom weights") {
  const DriftModel model = frame_model();
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.1);
  BoundaryDistribution a = BoundaryDistribution::single(0.0, 1.0, Vec::Constant(1, 0.5), Vec::Constant(1, 0.1));
  BoundaryDistribution b = BoundaryDistribution::single(0.0, 1.0, Vec::Constant(1, -0.2), Vec::Constant(1, 0.4));
  BoundaryDistribution ab;
  ab.t0 = 0.0;
  ab.tf = 1.0;
  ab.atoms = {{a.atoms[0].x0, a.atoms[0].yf, 0.3}, {b.atoms[0].x0, b.atoms[0].yf, 0.7}};
  const auto sa = gaussian_mixture_series(model, a, {0.5}, 16, grid);
  const auto sb = gaussian_mixture_series(model, b, {0.5}, 16, grid);
  const auto sab = gaussian_mixture_series(model, ab, {0.5}, 16, grid);
  CHECK((sab.slices[0].values - 0.3 * sa.slices[0].values - 0.7 * sb.slices[0].values).cwiseAbs().maxCoeff() < 1e-12);
  CHECK_THROWS_AS(mix_over_boundaries(model, ab, {0.5}, 10, 1, grid), Error);
}
