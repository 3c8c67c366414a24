#include <cmath>
#include <random>
#include <sstream>

#include "doctest.h"
#include "tsq/markov.hpp"
#include "tsq/oracle.hpp"

using namespace tsq;

namespace {

// Squeezing frame model with a coupled boundary law.
DriftModel frame_model() {
  Mat m(2, 2);
  m << -0.5, 0.0, 0.0, 0.5;
  return DriftModel::affine(m, Vec::Zero(2), 0.5);
}

GaussianBoundaryLaw law(double rho, double mx = 0.2, double my = -0.1) {
  GaussianBoundaryLaw l;
  l.mean = Vec(2);
  l.mean << mx, my;
  l.covariance = Mat(2, 2);
  l.covariance << 0.6, rho * 0.6, rho * 0.6, 0.6;
  return l;
}

double gaussian_density(const Vec& m, const Mat& c, const Vec& p) {
  const Vec d = p - m;
  return std::exp(-0.5 * d.dot(c.ldlt().solve(d))) / std::sqrt(std::pow(2 * M_PI, m.size()) * c.determinant());
}

}  // namespace

TEST_CASE("exact screening follows the boundary law") {
  const auto times = uniform_times(0.0, 1.0, 16);
  const DriftModel model = frame_model();
  const auto vars = screening_vars(1, 0, 8, 16);
  const auto coupled = markov_screening_test(gaussian_joint(model, law(0.7), times, vars));
  CHECK(coupled.verdict == Verdict::dependent);
  CHECK(coupled.statistic > 0.1);
  const auto product = markov_screening_test(gaussian_joint(model, law(0.0), times, vars));
  CHECK(product.verdict == Verdict::independent);
  CHECK(product.statistic < 1e-12);
  CHECK(product.method == "gaussian-exact");
  // the drift couples x and y inside the path but the screening verdict still tracks P_IN
  Mat m(2, 2);
  m << -0.3, 0.8, -0.6, 0.2;
  const DriftModel rotating = DriftModel::affine(m, Vec::Ones(2) * 0.1, 0.4);
  CHECK(markov_screening_test(gaussian_joint(rotating, law(0.0), times, vars)).verdict == Verdict::independent);
  CHECK(markov_screening_test(gaussian_joint(rotating, law(-0.5), times, vars)).verdict == Verdict::dependent);
}

TEST_CASE("exact statistic agrees with the Schur-complement oracle") {
  std::mt19937_64 rng(41);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 20; ++trial) {
    const Mat a = Mat::NullaryExpr(6, 6, [&]() { return n01(rng); });
    MultiTimeJoint j;
    j.covariance = a * a.transpose() + 0.1 * Mat::Identity(6, 6);
    j.mean = Vec::Zero(6);
    j.vars.resize(6);
    const std::vector<int> x{0, 1}, y{2}, c{3, 4, 5};
    const auto r = conditional_independence(j, x, y, c);
    const auto o = oracle::oracle_schur_ci(j.covariance, x, y, c);
    CHECK(r.statistic == doctest::Approx(o.partial_correlation).epsilon(1e-10));
    CHECK(r.verdict == Verdict::dependent);
  }
}

TEST_CASE("F/G/Z reconstructs the joint and factorizes iff P_IN does") {
  const auto times = uniform_times(0.0, 1.0, 12);
  const DriftModel model = frame_model();
  for (double rho : {0.0, 0.5}) {
    const auto l = law(rho);
    const FgzResult r = fgz_decomposition(model, l, times, 6);
    CHECK(r.factorizes == (rho == 0.0));
    // Z is constant for affine drift
    CHECK(std::abs(r.log_z_mixed) < 1e-8);
    CHECK(r.log_pin_mixed == doctest::Approx(-(l.covariance.inverse())(0, 1)));
    const MultiTimeJoint j = gaussian_joint(model, l, times, screening_vars(1, 0, 6, 12));
    for (const Vec& p : {Vec(Vec::Zero(4)), Vec((Vec(4) << 0.3, -0.4, 0.1, 0.5).finished()),
                         Vec((Vec(4) << -0.8, 0.6, -0.2, -0.3).finished())}) {
      const double want = gaussian_density(j.mean, j.covariance, p);
      CHECK(fgz_joint_density(model, l, times, 6, p) == doctest::Approx(want).epsilon(1e-8));
    }
  }
  // two steps per segment are the minimum
  CHECK_THROWS_AS(fgz_decomposition(model, law(0.0), times, 1), Error);
  CHECK_THROWS_AS(fgz_decomposition(DriftModel::zero(2, 0.5), law(0.0), times, 6), Error);
}

TEST_CASE("Bernstein and interior shielding in exact mode") {
  const auto times = uniform_times(0.0, 1.0, 16);
  const DriftModel model = frame_model();
  const auto j = gaussian_joint(model, law(0.7), times, bernstein_vars(1, 16, 4, 8, 12));
  CHECK(bernstein_test(j, 1, 4, 8, 12, BernsteinMode::mixed_endpoints).statistic < 1e-10);
  CHECK(bernstein_test(j, 1, 4, 8, 12, BernsteinMode::full_endpoints).statistic < 1e-10);
  const auto partial = bernstein_test(j, 1, 4, 8, 12, BernsteinMode::partial_x);
  CHECK(partial.verdict == Verdict::dependent);
  CHECK(partial.statistic > 1e-3);
  CHECK(interior_shielding_test(j, 1, 4, 8, 12, false).statistic < 1e-10);
  CHECK(interior_shielding_test(j, 1, 4, 8, 12, true).verdict == Verdict::dependent);
  CHECK_THROWS_AS(bernstein_test(j, 1, 8, 4, 12, BernsteinMode::mixed_endpoints), Error);
}

TEST_CASE("sampled screening") {
  const auto times = uniform_times(0.0, 1.0, 16);
  const DriftModel model = frame_model();
  const auto vars = screening_vars(1, 0, 8, 16);
  const auto coupled = markov_screening_test(sampled_joint(model, law(0.7), times, vars, 8000, 11));
  CHECK(coupled.verdict == Verdict::dependent);
  CHECK(coupled.p_value < 0.01);
  const auto product = markov_screening_test(sampled_joint(model, law(0.0), times, vars, 8000, 12));
  CHECK(product.verdict == Verdict::independent);
  CHECK(product.n_samples == 8000);
  // too few draws per conditioning cell
  const auto small = markov_screening_test(sampled_joint(model, law(0.7), times, vars, 200, 13));
  CHECK(small.verdict == Verdict::inconclusive);
  CHECK(!small.note.empty());
}

TEST_CASE("sampled joint draws match the exact moments") {
  const auto times = uniform_times(0.0, 1.0, 8);
  const DriftModel model = frame_model();
  const auto vars = screening_vars(1, 0, 4, 8);
  const auto l = law(0.4);
  const auto e = gaussian_joint(model, l, times, vars);
  const auto s = sampled_joint(model, l, times, vars, 40000, 5);
  const Vec mean = s.samples.rowwise().mean();
  const Mat d = s.samples.colwise() - mean;
  const Mat cov = d * d.transpose() / (s.samples.cols() - 1.0);
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(mean[i] - e.mean[i]) < 4 * std::sqrt(e.covariance(i, i) / 40000));
    for (int k = 0; k < 4; ++k) CHECK(std::abs(cov(i, k) - e.covariance(i, k)) < 0.03);
  }
  CHECK(s.names[0] == "x1@0");
  CHECK(s.names[1] == "y1@1");
  // same seed, same draws
  CHECK(sampled_joint(model, l, times, vars, 100, 5).samples == sampled_joint(model, l, times, vars, 100, 5).samples);
}

TEST_CASE("atom-list joint for a non-affine drift") {
  const auto times = uniform_times(0.0, 0.5, 8);
  const DriftModel cubic = frame_model().with_cubic(0.1);
  CHECK_THROWS_AS(gaussian_joint(cubic, law(0.0), times, screening_vars(1, 0, 4, 8)), Error);
  BoundaryDistribution p;
  p.t0 = 0.0;
  p.tf = 0.5;
  p.atoms = {{Vec::Constant(1, 0.3), Vec::Constant(1, 0.0), 0.5}, {Vec::Constant(1, -0.3), Vec::Constant(1, 0.2), 0.5}};
  const auto j = sampled_joint(cubic, p, times, screening_vars(1, 0, 4, 8), 301, 3);
  CHECK(j.sample_count() == 301);
  int high = 0;
  for (Eigen::Index c = 0; c < j.samples.cols(); ++c) high += j.samples(0, c) > 0;
  CHECK((high == 150 || high == 151));
  CHECK_THROWS_AS(sampled_joint(cubic, p, uniform_times(0.0, 1.0, 8), screening_vars(1, 0, 4, 8), 10, 3), Error);
}

TEST_CASE("conditionals and Gaussian TV") {
  Vec m1 = Vec::Zero(1), m2 = Vec::Ones(1);
  Mat c = Mat::Identity(1, 1);
  CHECK(gaussian_tv(m1, c, m2, c, 401) == doctest::Approx(std::erf(0.5 / std::sqrt(2.0))).epsilon(1e-3));
  CHECK(gaussian_tv(m1, c, m1, c) < 1e-14);
  const auto times = uniform_times(0.0, 1.0, 8);
  const DriftModel model = frame_model();
  std::vector<VarRef> vars{{0, 0}, {0, 1}, {8, 0}, {8, 1}};
  const auto e = gaussian_joint(model, law(0.3), times, vars);
  const auto s = sampled_joint(model, law(0.3), times, vars, 40000, 9);
  const auto ce = exact_conditional(e, {0, 1}, {2, 3});
  const auto cs = fitted_conditional(s, {0, 1}, {2, 3});
  CHECK((ce.gain - cs.gain).cwiseAbs().maxCoeff() < 0.05);
  CHECK((ce.covariance - cs.covariance).cwiseAbs().maxCoeff() < 0.02);
  CHECK_THROWS_AS(fitted_conditional(e, {0}, {1}), Error);
}

TEST_CASE("time-oriented conditionals depend on the preparation, the kernel does not") {
  const auto times = uniform_times(0.0, 1.0, 16);
  const DriftModel model = frame_model();
  LambdaOptions exact;
  exact.exact = true;
  const auto r = lambda_mediation_test(model, law(0.0), law(0.7), times, 1, exact);
  CHECK(r.kernel_tv < 1e-10);
  CHECK(r.oriented_tv > 0.05);
  CHECK(r.lambda_mediation_fails());
  LambdaOptions sampled;
  sampled.n_draws = 20000;
  const auto s = lambda_mediation_test(model, law(-0.8), law(0.8), times, 4, sampled);
  CHECK(s.oriented_tv > 10 * s.noise);
  CHECK(s.kernel_tv < s.noise);
  // preparations with no common support
  try {
    (void)lambda_mediation_test(model, law(0.0, 0.0, 0.0), law(0.0, 20.0, 20.0), times, 1, exact);
    FAIL("expected undefined comparison");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::undefined_comparison);
  }
}

TEST_CASE("verdict rows") {
  CITestResult r;
  r.statistic = 0.25;
  r.threshold = 1e-10;
  r.verdict = Verdict::dependent;
  r.method = "gaussian-exact";
  std::ostringstream out;
  write_verdict_header(out);
  write_verdict_row(out, "c07", "screening", r, 42);
  const std::string s = out.str();
  CHECK(s.rfind("instance_id,test,statistic,threshold,verdict,backend,n_samples,seed\n", 0) == 0);
  CHECK(s.find("c07,screening,") != std::string::npos);
  CHECK(s.find(",dependent,gaussian-exact,0,42\n") != std::string::npos);
}
