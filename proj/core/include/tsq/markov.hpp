#pragma once

// Conditional-independence diagnostics on bridge path laws: Markov screening-off, the F/G/Z
// decomposition, the Bernstein and interior-shielding properties, and the preparation
// dependence of time-oriented conditionals.
//
// Variables are frame coordinates at bridge grid steps. Two backends:
//   exact   - Gaussian path law (affine drift, Gaussian boundary law); Schur complements.
//   sampled - draws from the path measure; residualised binned CMI with a within-cell
//             permutation null.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsq/bridge.hpp"
#include "tsq/grid.hpp"
#include "tsq/propagator.hpp"

namespace tsq {

enum class Verdict { independent, dependent, inconclusive };
std::string_view to_string(Verdict v);

/// Gaussian law of the boundary data (x0, yf).
struct GaussianBoundaryLaw {
  Vec mean;
  Mat covariance;
};

/// Coordinate `coord` of psi at bridge step `step`.
struct VarRef {
  int step = 0;
  int coord = 0;
};

struct MultiTimeJoint {
  std::vector<double> times;       // bridge grid
  std::vector<VarRef> vars;
  std::vector<std::string> names;  // e.g. "x1@0.25"
  bool exact = true;
  Vec mean;                        // exact mode
  Mat covariance;
  Mat samples;                     // sampled mode: vars x draws
  std::uint64_t seed = 0;

  [[nodiscard]] int size() const { return static_cast<int>(vars.size()); }
  [[nodiscard]] long sample_count() const { return exact ? 0 : static_cast<long>(samples.cols()); }
  /// Positions in `vars` of the given references; throws when one is missing.
  [[nodiscard]] std::vector<int> find(const std::vector<VarRef>& refs) const;
};

/// Exact multi-time joint of the requested variables.
MultiTimeJoint gaussian_joint(const DriftModel& model, const GaussianBoundaryLaw& law,
                              const std::vector<double>& times, const std::vector<VarRef>& vars);

/// Draws from the boundary-averaged path measure. Affine drift with a Gaussian law is sampled
/// exactly through the bridge mean gain; other drifts run the MCMC sampler per atom with
/// paths allocated in proportion to the atom weights.
MultiTimeJoint sampled_joint(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                             const std::vector<VarRef>& vars, int n_draws, std::uint64_t seed);
MultiTimeJoint sampled_joint(const DriftModel& model, const BoundaryDistribution& p, const std::vector<double>& times,
                             const std::vector<VarRef>& vars, int n_draws, std::uint64_t seed,
                             const SamplerConfig& sampler = {});

struct CITestResult {
  double statistic = 0.0;
  double threshold = 0.0;
  Verdict verdict = Verdict::inconclusive;
  std::string method;  // gaussian-exact or permutation
  long n_samples = 0;
  double p_value = 1.0;
  std::string note;
};

struct CIOptions {
  double exact_threshold = 1e-10;
  double alpha = 0.01;
  int permutations = 199;
  int cond_bins = 3;        // quantile bins per conditioning direction
  int max_cell_dims = 2;    // conditioning directions (leading principal components) used for cells
  int value_bins = 4;       // quantile bins for the tested residuals
  int min_cell = 40;        // smallest conditioning cell before the verdict is inconclusive
  int poly_degree = 2;      // residualisation on polynomial features of the conditioning set
  std::uint64_t seed = 7;
};

/// a _||_ b | c on the positions of the joint. Exact mode: Frobenius norm of the partial
/// correlation block from the Schur complement. Sampled mode: permutation-calibrated CMI.
CITestResult conditional_independence(const MultiTimeJoint& joint, const std::vector<int>& a,
                                      const std::vector<int>& b, const std::vector<int>& c,
                                      const CIOptions& opts = {});

/// Standard layout for the screening test on n modes: joint over
/// [x(t1) | y(t3) | x(t2) | y(t2)], each block n wide.
std::vector<VarRef> screening_vars(int n, int k1, int k2, int k3);
CITestResult markov_screening_test(const MultiTimeJoint& joint, const CIOptions& opts = {});

/// One-mode F/G/Z on a grid over (x2, y2).
struct FgzOptions {
  double half_width = 8.0;  // grid half width in standard deviations of (x2, y2)
  int points = 161;         // nodes per axis
  double probe = 0.5;       // step for the mixed second difference of log Z
};

struct FgzResult {
  int k2 = 0;
  PhaseGrid grid;           // over (x2, y2)
  Vec center;               // (x1, y3) at which F, G were tabulated
  Vec f;                    // F(x2, y2; x1)
  Vec g;                    // G(x2, y2; y3)
  double z = 0.0;           // Z(x1, y3)
  double log_z_mixed = 0.0; // d^2 log Z / dx1 dy3 by central differences
  double log_pin_mixed = 0.0;
  double factorization_statistic = 0.0;  // |mixed derivative of log(P_IN / Z)|
  bool factorizes = false;
};

/// F(x2,y2;x1) = int P(x2,y1 | y2,x1) dy1 and G(x2,y2;y3) = int P(x3,y2 | y3,x2) dx3 from exact
/// segment bridges, Z by quadrature. Requires one mode and an affine drift.
double fgz_log_z(const DriftModel& model, const std::vector<double>& times, int k2, double x1, double y3,
                 const FgzOptions& opts, FgzResult* keep = nullptr);
FgzResult fgz_decomposition(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                            int k2, const FgzOptions& opts = {}, double tol = 1e-6);

/// Joint density at (x1, y3, x2, y2) rebuilt as P_IN F G / Z.
double fgz_joint_density(const DriftModel& model, const GaussianBoundaryLaw& law, const std::vector<double>& times,
                         int k2, const Vec& point, const FgzOptions& opts = {});

/// Mixed second derivative of log P_IN in (x, y) for a Gaussian law: -(Sigma^-1)_xy.
Mat pin_log_mixed(const GaussianBoundaryLaw& law);

enum class BernsteinMode { mixed_endpoints, full_endpoints, partial_x };

/// phi(t1) _||_ phi(t3) | phi(t2) + endpoint data. partial_x conditions on x(t2) only.
CITestResult bernstein_test(const MultiTimeJoint& joint, int n, int k1, int k2, int k3, BernsteinMode mode,
                            const CIOptions& opts = {});
std::vector<VarRef> bernstein_vars(int n, int steps, int k1, int k2, int k3);

/// phi(t2) _||_ (phi_s, phi_u) | (phi(t1), phi(t3)); partial conditions on x(t1), x(t3) only.
CITestResult interior_shielding_test(const MultiTimeJoint& joint, int n, int k1, int k2, int k3, bool partial,
                                     const CIOptions& opts = {});

/// Linear-Gaussian conditional phi_b | phi_a = mean0 + gain * phi_a, covariance.
struct GaussianConditional {
  Vec mean0;
  Mat gain;
  Mat covariance;
  [[nodiscard]] Vec mean_at(const Vec& a) const { return mean0 + gain * a; }
};

GaussianConditional exact_conditional(const MultiTimeJoint& joint, const std::vector<int>& given,
                                      const std::vector<int>& target);
GaussianConditional fitted_conditional(const MultiTimeJoint& joint, const std::vector<int>& given,
                                       const std::vector<int>& target);

/// Total variation between two Gaussians by quadrature on a grid spanning both.
double gaussian_tv(const Vec& m1, const Mat& c1, const Vec& m2, const Mat& c2, int points = 121);

struct LambdaOptions {
  int n_draws = 20000;     // sampled mode draws per preparation
  int replicates = 6;      // same-preparation replicate pairs for the noise level
  int probes = 5;
  bool exact = false;
};

struct LambdaReport {
  double oriented_tv = 0.0;   // sup over probes, time-oriented conditionals across preparations
  double kernel_tv = 0.0;     // sup over probes, mixed-time kernels across preparations
  double noise = 0.0;         // mean + 3 sd of same-preparation replicate distances
  double oriented_noise = 0.0;
  std::vector<Vec> probes;
  bool exact = false;
  [[nodiscard]] bool lambda_mediation_fails() const { return oriented_tv > 10.0 * noise && kernel_tv < noise; }
};

/// Time-oriented conditionals P(phi(tf) | phi(t0)) and the mixed-time kernel
/// P(x(tf), y(t0) | y(tf), x(t0)) under two preparations of the boundary law.
LambdaReport lambda_mediation_test(const DriftModel& model, const GaussianBoundaryLaw& r1,
                                   const GaussianBoundaryLaw& r2, const std::vector<double>& times,
                                   std::uint64_t seed, const LambdaOptions& opts = {});

/// CSV row layout for verdict tables.
void write_verdict_header(std::ostream& out);
void write_verdict_row(std::ostream& out, const std::string& instance, const std::string& test,
                       const CITestResult& r, std::uint64_t seed);

}  // namespace tsq
