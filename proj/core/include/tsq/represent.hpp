#pragma once

// Is a target phase-space density at one time a mixture of time-symmetric propagators?
//
// A dictionary of boundary atoms (x0, yf) gives one column per atom: the KDE of that atom's
// bridge ensemble at the target time. The target is smoothed with the same kernel, and the
// weights are fitted by least squares on the probability simplex. The fit is judged against
// the Monte Carlo floor of the columns themselves.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <limits>
#include <string>
#include <vector>

#include "tsq/grid.hpp"
#include "tsq/propagator.hpp"
#include "tsq/symbol.hpp"

namespace tsq {

enum class Representability { representable, gap, inconclusive };
std::string_view to_string(Representability r);

struct RepresentOptions {
  double time = 0.5;            // fit time, strictly inside the dictionary interval
  std::vector<double> holdout_times;  // validation times not used in the fit
  int steps = 32;               // bridge steps
  int budget = 4000;            // paths per atom
  double bandwidth_scale = 1.0; // times the largest Silverman bandwidth over atoms
  std::optional<Vec> bandwidth;
  SamplerConfig sampler;
  int max_iterations = 20000;
  double tolerance = 1e-13;     // projected-gradient stopping rule on the weight change
  double representable_factor = 2.0;
  double gap_factor = 5.0;
  bool confirm_gap = true;      // a gap must persist at twice the budget
  int margin = 3;
};

struct FitResult {
  Vec weights;
  double residual = 0.0;  // ||A w - b|| / ||b|| over interior grid points
  int iterations = 0;
};

struct HoldoutRow {
  double time = 0.0;
  double residual = 0.0;
  double floor = 0.0;
};

struct RepresentResult {
  Vec weights;
  double residual = 0.0;        // relative L2 at the fit time
  double residual_linf = 0.0;   // max |fit - target| / max |target| at the fit time
  double floor = 0.0;
  std::vector<HoldoutRow> holdout;
  std::string floor_method;     // exact-columns or split-half
  Representability verdict = Representability::inconclusive;
  double residual_doubled = std::numeric_limits<double>::quiet_NaN();
  double floor_doubled = std::numeric_limits<double>::quiet_NaN();
  Vec bandwidth;
  QField target;                // smoothed target
  QField fit;
  int iterations = 0;
  int budget = 0;
};

/// Husimi field over quadrature coordinates -> density over frame coordinates with the plain
/// measure (Q / 2^N), interpolated multilinearly onto `frame_grid`.
QField frame_density_from_husimi(const QField& q, const QuadratureFrame& frame, const PhaseGrid& frame_grid);

/// Convolution with a product Gaussian of per-axis width `bandwidth` (zero: untouched axis).
Vec smooth_on_grid(const PhaseGrid& grid, const Vec& values, const Vec& bandwidth);

/// Least squares min ||A w - b|| over w >= 0, sum w = 1 (accelerated projected gradient).
FitResult simplex_least_squares(const Mat& a, const Vec& b, const PhaseGrid& grid, int margin, int max_iterations,
                                double tolerance);

/// Euclidean projection onto the probability simplex.
Vec project_simplex(const Vec& v);

/// Design matrices at several times from one bridge ensemble per atom.
struct ColumnSet {
  std::vector<double> times;
  std::vector<Mat> columns;           // grid points x atoms, one per time
  std::vector<Mat> half_a, half_b;    // same from each half of the paths (when requested)
  Vec bandwidth;                      // common to every atom and time
};

/// KDE columns of every dictionary atom with one common bandwidth (explicit, or scale times the
/// largest Silverman bandwidth over atoms and times).
ColumnSet dictionary_columns(const DriftModel& model, const BoundaryDistribution& dictionary, const PhaseGrid& grid,
                             const std::vector<double>& times, const RepresentOptions& opts, int budget,
                             std::uint64_t seed, bool halves = false);

/// Exact smoothed columns (affine drift): Gaussian marginals widened by the bandwidth.
Mat exact_columns(const DriftModel& model, const BoundaryDistribution& dictionary, const PhaseGrid& grid,
                  double time, const RepresentOptions& opts, const Vec& bandwidth);

/// Targets are unsmoothed densities over frame coordinates on one grid: the first at opts.time,
/// then one per holdout time. The verdict uses the worst residual-to-floor ratio over all times.
RepresentResult represent(const DriftModel& model, const BoundaryDistribution& dictionary,
                          const std::vector<QField>& targets, std::uint64_t seed, const RepresentOptions& opts = {});
RepresentResult represent(const DriftModel& model, const BoundaryDistribution& dictionary, const QField& target,
                          std::uint64_t seed, const RepresentOptions& opts = {});

/// 0.5 * sum |w - v|.
double weight_tv(const Vec& w, const Vec& v);

void write_weights_csv(std::ostream& out, const BoundaryDistribution& dictionary, const RepresentResult& r);
void write_represent_summary_csv(std::ostream& out, const RepresentResult& r);

}  // namespace tsq
