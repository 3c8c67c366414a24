#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "tsq/husimi.hpp"

using namespace tsq;

namespace {

QField gaussian_q(const PhaseGrid& g, Complex beta) {
  QField q{g, Vec(g.size()), 0.0, Measure::alpha_area};
  for (std::size_t i = 0; i < g.size(); ++i) {
    const CVec a = phi_to_alpha(g.point(i));
    q.values[i] = std::exp(-std::norm(a[0] - beta)) / M_PI;
  }
  return q;
}

double max_rel_diff(const PhaseGrid& g, const Vec& a, const Vec& b, int margin) {
  return max_abs_interior(g, a - b, margin) / std::max(1e-300, max_abs_interior(g, b, margin));
}

}  // namespace

TEST_CASE("husimi values of simple states") {
  const CVec zero = CVec::Zero(1);
  CHECK(husimi_value(FockState::vacuum(1, 10), zero) == doctest::Approx(1 / M_PI));
  const Complex beta(0.8, -0.3);
  const FockState coh = FockState::coherent(CVec::Constant(1, beta), 40);
  const CVec at = CVec::Constant(1, Complex(0.1, 0.2));
  CHECK(husimi_value(coh, at) == doctest::Approx(std::exp(-std::norm(at[0] - beta)) / M_PI).epsilon(1e-12));
  const FockState one = FockState::number(1, 10);
  for (double r : {0.3, 1.0, 1.7}) {
    const CVec p = CVec::Constant(1, Complex(r, 0));
    CHECK(husimi_value(one, p) == doctest::Approx(r * r * std::exp(-r * r) / M_PI).epsilon(1e-12));
  }
}

TEST_CASE("husimi field is normalised and nonnegative") {
  const PhaseGrid g = husimi_grid(1, -6, 6, 0.1);
  for (const FockState& s : {FockState::vacuum(1, 30), FockState::number(3, 30), FockState::even_cat(1.5, 40)}) {
    const HusimiField f = husimi_from_fock(s, g);
    CHECK(f.field.integral() == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(f.field.min_value() >= -kQNegativeTolerance);
  }
  // single photon peaks on |alpha| = 1
  const HusimiField f = husimi_from_fock(FockState::number(1, 10), g);
  Eigen::Index imax;
  f.field.values.maxCoeff(&imax);
  CHECK(std::abs(phi_to_alpha(g.point(imax))[0]) == doctest::Approx(1.0).epsilon(0.05));
}

TEST_CASE("small cutoff or small grid produces a leakage warning") {
  const PhaseGrid g = husimi_grid(1, -7, 7, 0.2);
  const HusimiField f = husimi_from_fock(FockState::coherent(CVec::Constant(1, 1.0), 8), g);
  CHECK(f.truncation_leakage > 1e-6);
  CHECK_FALSE(f.warnings.empty());
  CHECK(husimi_from_fock(FockState::coherent(CVec::Constant(1, 1.0), 40), g).warnings.empty());
  CHECK_FALSE(husimi_from_fock(FockState::vacuum(1, 20), husimi_grid(1, -2.4, 2.4, 0.2)).warnings.empty());
}

TEST_CASE("series of a constant symbol vanishes") {
  const PhaseGrid g = husimi_grid(1, -4, 4, 0.1);
  ComplexPolynomial c(1);
  c.add_term({{0}, {0}}, 2.0);
  CHECK(series_rhs(gaussian_q(g, 0.5), c, 4).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(series_rhs(gaussian_q(g, 0.5), c, 7), Error);
}

TEST_CASE("series truncates for quadratic symbols") {
  std::mt19937_64 rng(23);
  const PhaseGrid g = husimi_grid(1, -5, 5, 0.1);
  const QField q = gaussian_q(g, Complex(0.4, -0.2));
  for (int trial = 0; trial < 10; ++trial) {
    const auto h = testing::random_quadratic_symbol(1, rng);
    const Vec s2 = series_rhs(q, h, 2);
    const Vec s5 = series_rhs(q, h, 5);
    const Vec f = fpe_rhs(q, h);
    CHECK((s2 - s5).cwiseAbs().maxCoeff() == 0.0);
    CHECK((s2 - f).cwiseAbs().maxCoeff() <= 1e-10 * f.cwiseAbs().maxCoeff());
  }
}

TEST_CASE("two-mode series matches the truncated equation") {
  std::mt19937_64 rng(29);
  const PhaseGrid g = husimi_grid(2, -3.2, 3.2, 0.4);
  QField q{g, Vec(g.size()), 0.0, Measure::alpha_area};
  for (std::size_t i = 0; i < g.size(); ++i) q.values[i] = std::exp(-0.5 * g.point(i).squaredNorm());
  const auto h = testing::random_quadratic_symbol(2, rng);
  const Vec s2 = series_rhs(q, h, 2);
  const Vec f = fpe_rhs(q, h);
  CHECK((s2 - f).cwiseAbs().maxCoeff() <= 1e-10 * f.cwiseAbs().maxCoeff());
}

TEST_CASE("higher series terms of a quartic symbol") {
  // For Q = vacuum and H = harmonic + lam (alpha + alpha*)^4 the |m| = 3, 4 terms are, in
  // closed form (hbar = 1), lam Q [ (8|alpha|^2 - 24) Im(alpha*^2) + 6 Im(alpha*^4) ].
  const double lam = 0.1;
  const auto h = presets::quartic(lam);
  const PhaseGrid g = husimi_grid(1, -5, 5, 0.05);
  const QField q = gaussian_q(g, 0.0);
  const Vec extra = series_rhs(q, h, 4) - series_rhs(q, h, 2);
  Vec exact(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Complex a = phi_to_alpha(g.point(i))[0];
    const Complex ac = std::conj(a);
    exact[i] = lam * q.values[i] * ((8 * std::norm(a) - 24) * (ac * ac).imag() + 6 * std::pow(ac, 4).imag());
  }
  CHECK(max_abs_interior(g, extra, 3) > 1e-3);
  CHECK(max_rel_diff(g, extra, exact, 3) < 1e-4);
  // kerr symbol stays quadratic in each variable: series truncates exactly
  const auto k = presets::kerr(0.1);
  CHECK((series_rhs(q, k, 4) - series_rhs(q, k, 2)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(fpe_rhs(q, h), Error);
}

TEST_CASE("harmonic rhs: vacuum is stationary, coherent state is advected") {
  const auto h = presets::harmonic(1.0);
  const PhaseGrid g = husimi_grid(1, -6, 6, 0.05);
  CHECK(max_abs_interior(g, fpe_rhs(gaussian_q(g, 0.0), h), 3) < 1e-6);
  const Complex beta(1.0, 0.0);
  const QField q = gaussian_q(g, beta);
  const DriftField a = drift_field(h);
  Vec exact(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    const Vec p = g.point(i);
    const Vec b = alpha_to_phi(CVec::Constant(1, beta));
    const Vec grad = -(p - b) * q.values[i];  // Q = exp(-|phi - b|^2 / 2) / pi
    exact[i] = -a(p).dot(grad);
  }
  CHECK(max_rel_diff(g, fpe_rhs(q, h), exact, 3) < 1e-5);
}

TEST_CASE("rhs conserves probability and diffusion scales with hbar") {
  const PhaseGrid g = husimi_grid(1, -6, 6, 0.05);
  const QField q = gaussian_q(g, Complex(0.5, 0.3));
  std::mt19937_64 rng(41);
  const auto h = testing::random_quadratic_symbol(1, rng);
  QField r{g, fpe_rhs(q, h), 0.0, Measure::alpha_area};
  CHECK(std::abs(r.integral()) < 1e-6);
  const FpeParts p1 = fpe_rhs_parts(q, h);
  const FpeParts p2 = fpe_rhs_parts(q, h.with_hbar(2.0));
  CHECK((p2.diffusion - 2.0 * p1.diffusion).cwiseAbs().maxCoeff() <= 1e-10 * p1.diffusion.cwiseAbs().maxCoeff());
  CHECK((p2.drift - p1.drift).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("residual check: harmonic and paramp coincide with unitary evolution") {
  const PhaseGrid g = husimi_grid(1);
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto harm = fpe_residual_check(presets::harmonic(1.0), FockState::coherent(CVec::Constant(1, 1.0), 40),
                                       times, g);
  CHECK(harm.verdict == "consistent");
  for (const auto& r : harm.rows) CHECK(r.l2_residual <= 1e-3);
  const auto pa = fpe_residual_check(presets::paramp(0.5), FockState::vacuum(1, 60), times, g);
  CHECK(pa.verdict == "consistent");
  for (const auto& r : pa.rows) CHECK(r.l2_residual <= 1e-3);
  std::ostringstream csv;
  write_residual_csv(csv, pa);
  CHECK(csv.str().rfind("time,max_residual,l2_residual,threshold,pass\n", 0) == 0);
}

TEST_CASE("residual check flags the quartic series terms") {
  const PhaseGrid g = husimi_grid(1, -6, 6, 0.05);
  const auto rep =
      fpe_residual_check(presets::quartic(0.1), FockState::coherent(CVec::Constant(1, 0.7), 60), {0.0, 0.04}, g);
  CHECK_FALSE(rep.all_pass());
  CHECK(rep.verdict == "series-term-detected");
  for (const auto& r : rep.rows) CHECK(r.series_l2_residual <= r.threshold);
}

TEST_CASE("expectation values follow the trace formula") {
  const PhaseGrid g = husimi_grid(1, -7, 7, 0.05);
  ComplexPolynomial one(1), n(1);
  one.add_term({{0}, {0}}, 1.0);
  n.add_term({{1}, {1}}, 1.0);
  n.add_term({{0}, {0}}, -1.0);
  const QField vac = husimi_from_fock(FockState::vacuum(1, 40), g).field;
  CHECK(expectation(one, vac) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(std::abs(expectation(n, vac)) < 1e-6);
  const QField coh = husimi_from_fock(FockState::coherent(CVec::Constant(1, Complex(1.0, 1.0)), 50), g).field;
  CHECK(expectation(n, coh) == doctest::Approx(2.0).epsilon(1e-6));
  CHECK(boundary_mass_fraction(coh) < 1e-6);
}

TEST_CASE("liouville transport") {
  const PhaseGrid g = husimi_grid(1, -6, 6, 0.1);
  const QField q = gaussian_q(g, Complex(1.0, 0.5));
  ComplexPolynomial zero(1);
  CHECK((liouville_evolve(q, zero, 1.0, 4).values - q.values).norm() == 0.0);
  const auto h = presets::harmonic(1.0);
  const QField back = liouville_evolve(q, h, 2 * M_PI, 160);
  const double l1 = (back.values - q.values).cwiseAbs().sum() * q.volume_factor();
  CHECK(l1 <= 1e-3);
  CHECK(std::abs(back.integral() - q.integral()) < 1e-6);
  CHECK_THROWS_AS(liouville_evolve(q, h, 2 * M_PI, 2), Error);
}

TEST_CASE("classical kerr flow preserves phase-space volume") {
  ComplexPolynomial h(1, 1.0);
  h.add_term({{2}, {2}}, 0.5);
  std::mt19937_64 rng(13);
  std::normal_distribution<double> gd;
  std::vector<Vec> pts;
  for (int i = 0; i < 20; ++i) pts.push_back(Vec::NullaryExpr(2, [&](Eigen::Index) { return gd(rng); }));
  CHECK(flow_volume_deviation(h, pts, 1.0, 200) < 1e-5);
}
