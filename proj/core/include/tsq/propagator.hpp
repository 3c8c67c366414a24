#pragma once

// Time-symmetric propagators estimated from bridge ensembles, mixtures of them over boundary
// distributions, and the Fokker-Planck residual of such mixtures.
//
// Densities live on a PhaseGrid over frame coordinates psi = (x, y) with the plain
// phase-space measure. The evolution they should obey is
//   d_t rho = -div(A rho) + (1/2) sum_ab d_a d_b (D_ab rho),   D = diag(d I, -d I).

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "tsq/bridge.hpp"
#include "tsq/grid.hpp"

namespace tsq {

struct BoundaryAtom {
  Vec x0;
  Vec yf;
  double weight = 1.0;
};

/// Weighted atom list over (x0, yf), x pinned at t0 and y at tf.
struct BoundaryDistribution {
  double t0 = 0.0;
  double tf = 1.0;
  std::vector<BoundaryAtom> atoms;

  static BoundaryDistribution single(double t0, double tf, Vec x0, Vec yf);
  [[nodiscard]] BridgeBoundary boundary(std::size_t atom) const;
  /// Weights >= 0 summing to 1 within 1e-12, consistent block sizes.
  void validate(int n) const;
  [[nodiscard]] int modes() const { return atoms.empty() ? 0 : static_cast<int>(atoms[0].x0.size()); }
};

struct KdeOptions {
  double bandwidth_scale = 1.0;   // multiplies the Silverman rule
  std::optional<Vec> bandwidth;   // explicit per-coordinate bandwidth, same for every slice
};

struct TspOptions {
  int steps = 64;              // bridge time steps between t0 and tf
  SamplerConfig sampler;
  KdeOptions kde;
  double min_ess_fraction = 0.1;  // required min ESS as a fraction of n_paths
};

struct PropagatorEstimate {
  BridgeBoundary boundary;
  std::vector<double> times;
  std::vector<QField> slices;
  std::vector<Vec> bandwidths;  // per slice; zero entries mark exactly represented coordinates
  int n_paths = 0;
  double min_ess = 0.0;
};

/// Samples of psi at the requested bridge steps: one dim x n_paths matrix per step.
struct SliceSamples {
  std::vector<int> steps;
  std::vector<Mat> values;
  SamplerDiagnostics diagnostics;
};

/// Bridge grid indices of the evaluation times; throws a config error when a time is off-grid.
std::vector<int> time_indices(const std::vector<double>& bridge_times, const std::vector<double>& eval_times);

SliceSamples sample_slices(const DriftModel& model, const BridgeBoundary& boundary, const std::vector<double>& bridge_times,
                           const std::vector<int>& steps, int n_paths, std::uint64_t seed, const SamplerConfig& sampler);

/// Silverman bandwidth per coordinate (zero for coordinates with zero spread).
Vec silverman_bandwidth(const Mat& samples);

/// Product-Gaussian KDE of the columns of `samples` on `grid`, each sample carrying `weight`.
/// Coordinates with zero bandwidth are deposited exactly (cloud-in-cell along that axis).
void accumulate_kde(const PhaseGrid& grid, const Mat& samples, const Vec& bandwidth, double weight, Vec& out);

PropagatorEstimate estimate_tsp(const DriftModel& model, const BridgeBoundary& boundary,
                                const std::vector<double>& eval_times, int n_paths, std::uint64_t seed,
                                const PhaseGrid& grid, const TspOptions& opts = {});

/// Density time series of a boundary-averaged ensemble.
struct MixtureSeries {
  std::vector<double> times;
  std::vector<QField> slices;
  Vec bandwidth;              // common smoothing bandwidth; empty when slices are unsmoothed
  std::string noise_model;    // printed in every report
  int budget = 0;             // paths per atom (0 for exact slices)
};

/// Seed of atom i derived from the run seed.
std::uint64_t atom_seed(std::uint64_t seed, std::size_t atom);

/// KDE mixture: sum over atoms of weight * estimated propagator. One bandwidth is shared by
/// every atom and slice (explicit, or scale times the largest interior Silverman bandwidth).
MixtureSeries mix_over_boundaries(const DriftModel& model, const BoundaryDistribution& p,
                                  const std::vector<double>& eval_times, int budget, std::uint64_t seed,
                                  const PhaseGrid& grid, const TspOptions& opts = {});

/// Same mixture with every slice replaced by the exact discrete-bridge Gaussian marginal
/// (affine drift only). With `smoothing`, each Gaussian is widened by diag(smoothing^2) on its
/// non-pinned coordinates, matching what a KDE with that bandwidth targets.
MixtureSeries gaussian_mixture_series(const DriftModel& model, const BoundaryDistribution& p,
                                      const std::vector<double>& eval_times, int steps, const PhaseGrid& grid,
                                      const std::optional<Vec>& smoothing = std::nullopt);

/// Density of N(mean, cov) on the grid; coordinates with zero variance are exact deltas.
Vec gaussian_on_grid(const PhaseGrid& grid, const Vec& mean, const Mat& cov);

struct MixtureResidualOptions {
  double threshold = 0.1;       // relative L2; statistical for KDE input
  double mass_tolerance = 1e-2; // |integral - 1| allowed per slice
  int margin = 3;
  bool correct_smoothing = true;  // fold a known KDE bandwidth into the diffusion (affine drift)
};

struct MixtureResidualRow {
  double time = 0.0;
  double residual = 0.0;
  double mass = 0.0;
  double threshold = 0.0;
  bool pass = false;
};

struct MixtureResidualReport {
  std::vector<MixtureResidualRow> rows;
  std::string noise_model;
  [[nodiscard]] bool all_pass() const;
};

/// Centred time difference of the series against the Fokker-Planck right-hand side at every
/// interior slice. The residual is ||d_t rho - rhs|| / max(||d_t rho||, ||rhs||) over interior
/// grid points; a slice whose mass is off by more than the tolerance also fails.
MixtureResidualReport mixture_fpe_residual(const MixtureSeries& series, const DriftModel& model,
                                           const MixtureResidualOptions& opts = {});

void write_mixture_residual_csv(std::ostream& out, const MixtureResidualReport& report);

}  // namespace tsq
