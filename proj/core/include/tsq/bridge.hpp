#pragma once

// Mixed-time stochastic bridges under the discretised Onsager-Machlup action.
//
// Everything here lives in frame coordinates psi = (x_1..x_n, y_1..y_n), where the
// diffusion is diag(d I, -d I). x is pinned at t0, y is pinned at tf, and the
// complementary blocks y(t0), x(tf) are free variables of the measure exp(-S).
//
// Discrete action, K steps of size dt, midpoint rule:
//   S = sum_k dt * ( |(psi_{k+1} - psi_k)/dt - A(m_k)|^2 / (2d) - V(m_k) ),
//   m_k = (psi_k + psi_{k+1})/2,   V = -div A / 2.
//
// Free-variable vector z: [ y_0 (n) | psi_1 .. psi_{K-1} (2n each) | x_K (n) ], length 2nK.

#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsq/common.hpp"
#include "tsq/symbol.hpp"

namespace tsq {

/// Drift and diffusion magnitude of the bridge measure in frame coordinates.
class DriftModel {
 public:
  using Field = std::function<Vec(const Vec&)>;
  using Jacobian = std::function<Mat(const Vec&)>;

  /// Drift of a quadratic-diffusion Hamiltonian rotated into its diffusion frame.
  static DriftModel from_hamiltonian(const ComplexPolynomial& h, const QuadratureFrame& frame);
  static DriftModel from_hamiltonian(const ComplexPolynomial& h);
  /// A(psi) = m psi + c.
  static DriftModel affine(const Mat& m, const Vec& c, double d);
  static DriftModel zero(int n, double d);
  /// Arbitrary smooth drift. The divergence gradient is taken by central differences.
  static DriftModel custom(int n, double d, Field drift, Jacobian jacobian);

  [[nodiscard]] int n() const { return n_; }
  [[nodiscard]] int dim() const { return 2 * n_; }
  [[nodiscard]] double d() const { return d_; }
  [[nodiscard]] bool is_affine() const { return affine_; }
  [[nodiscard]] const Mat& linear_part() const { return m_; }  // affine models only
  [[nodiscard]] const Vec& offset() const { return c_; }

  [[nodiscard]] Vec drift(const Vec& psi) const;
  [[nodiscard]] Mat jacobian(const Vec& psi) const;
  [[nodiscard]] double divergence(const Vec& psi) const { return jacobian(psi).trace(); }
  [[nodiscard]] Vec divergence_gradient(const Vec& psi) const;

  /// Same drift, different diffusion magnitude.
  [[nodiscard]] DriftModel with_d(double d) const;
  /// Adds -eps * psi_c^3 to every coordinate c: a weak non-affine perturbation.
  [[nodiscard]] DriftModel with_cubic(double eps) const;

 private:
  int n_ = 1;
  double d_ = 0.0;
  bool affine_ = false;
  bool constant_divergence_ = false;
  Mat m_;
  Vec c_;
  Field field_;
  Jacobian jac_;
};

struct BridgeBoundary {
  double t0 = 0.0;
  double tf = 1.0;
  Vec x0;  // x block at t0
  Vec yf;  // y block at tf
  [[nodiscard]] Vec stacked() const;  // (x0, yf)
};

/// Uniform time grid t0..tf with `steps` intervals.
std::vector<double> uniform_times(double t0, double tf, int steps);

struct DiscretePath {
  std::vector<double> times;
  Mat values;  // dim x (K+1), column k is psi(t_k)
  [[nodiscard]] int steps() const { return static_cast<int>(times.size()) - 1; }
  [[nodiscard]] double dt() const { return times[1] - times[0]; }
};

DiscretePath make_path(const std::vector<double>& times, int dim);

double om_action(const DiscretePath& path, const DriftModel& model);
double om_action(const DiscretePath& path, const ComplexPolynomial& h, const QuadratureFrame& frame);
/// Action restricted to steps [k_begin, k_end).
double om_action_segment(const DiscretePath& path, const DriftModel& model, int k_begin, int k_end);
/// Gradient of the action with respect to every path value, same shape as path.values.
Mat om_action_gradient(const DiscretePath& path, const DriftModel& model);

int free_dimension(int n, int steps);
Vec pack_free(const DiscretePath& path);
/// Path with boundary data inserted and free variables taken from z.
DiscretePath unpack_free(const Vec& z, const BridgeBoundary& boundary, const std::vector<double>& times, int n);
Vec free_gradient(const Mat& full_gradient, int n);

/// Exact law of the free variables for an affine drift: density exp(-(1/2) z'Pz + b'z - c).
struct GaussianBridge {
  int n = 1;
  std::vector<double> times;
  BridgeBoundary boundary;
  Mat precision;   // P
  Vec linear;      // b
  Vec mean;        // P^-1 b
  Mat covariance;  // P^-1
  Mat gain;        // d mean / d (x0, yf)

  [[nodiscard]] DiscretePath mean_path() const;
  /// Mean and covariance of psi(t_k); pinned blocks get zero variance.
  [[nodiscard]] Vec marginal_mean(int k) const;
  [[nodiscard]] Mat marginal_covariance(int k) const;
  /// Cross-covariance between psi(t_j) and psi(t_k).
  [[nodiscard]] Mat cross_covariance(int j, int k) const;
};

GaussianBridge gaussian_bridge_exact(const DriftModel& model, const BridgeBoundary& boundary,
                                     const std::vector<double>& times);

/// Gaussian law of every path value (dim*(K+1) entries, time-major) when the boundary data
/// (x0, yf) is itself Gaussian with the given mean and covariance.
struct PathLaw {
  int n = 1;
  std::vector<double> times;
  Vec mean;
  Mat covariance;
  [[nodiscard]] int index(int k, int coord) const { return k * 2 * n + coord; }
};

PathLaw gaussian_path_law(const DriftModel& model, const std::vector<double>& times, const Vec& boundary_mean,
                          const Mat& boundary_covariance);

struct NewtonOptions {
  int max_iterations = 100;
  double gradient_tol = 1e-8;
};

DiscretePath most_probable_path(const DriftModel& model, const BridgeBoundary& boundary,
                                const std::vector<double>& times, const NewtonOptions& opts = {},
                                const std::optional<Vec>& start = std::nullopt);

struct SamplerConfig {
  int chains = 4;
  int warmup = 200;
  int thin = 1;
  double rho = 0.0;  // pCN persistence; 0 is an independence proposal
  bool adapt = true;
  double min_acceptance = 0.01;
};

struct SamplerDiagnostics {
  double acceptance = 0.0;
  double rho = 0.0;
  double min_ess = 0.0;           // over the monitored midpoint coordinates
  std::vector<double> ess;        // per midpoint coordinate
  double hessian_min_eig = 0.0;   // normalisability probe at the mode
};

struct BridgeEnsemble {
  BridgeBoundary boundary;
  std::vector<double> times;
  int n = 1;
  Mat samples;  // column j = path j flattened time-major: entry k*2n + c
  SamplerDiagnostics diagnostics;
  std::uint64_t seed = 0;

  [[nodiscard]] int size() const { return static_cast<int>(samples.cols()); }
  [[nodiscard]] DiscretePath path(int j) const;
  /// dim x size matrix of psi(t_k) over the ensemble.
  [[nodiscard]] Mat slice(int k) const;
};

/// MCMC over the free variables targeting exp(-S). Proposal: pCN move around the action
/// minimiser, preconditioned by the Hessian there, with a Metropolis correction.
BridgeEnsemble sample_bridges(const DriftModel& model, const BridgeBoundary& boundary,
                              const std::vector<double>& times, int n_paths, std::uint64_t seed,
                              const SamplerConfig& config = {});

/// Integrated-autocorrelation effective sample size (Geyer initial positive sequence).
double effective_sample_size(const Vec& chain);

void write_ensemble(std::ostream& out, const BridgeEnsemble& e);
BridgeEnsemble read_ensemble(std::istream& in);
void write_diagnostics_csv(std::ostream& out, const BridgeEnsemble& e);

}  // namespace tsq
