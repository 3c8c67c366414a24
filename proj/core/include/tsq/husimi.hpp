#pragma once

// Husimi Q-functions on grids: construction from Fock states, the full evolution series and its
// Fokker-Planck truncation, residual verification against unitary evolution, expectation
// values, and drift-only (classical) transport.
//
// The traceless-diffusion equation is never time-stepped forward here: it is checked by
// comparing its right-hand side against time derivatives taken from the Fock oracle.

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "tsq/fock.hpp"
#include "tsq/grid.hpp"
#include "tsq/symbol.hpp"

namespace tsq {

/// Lower bound allowed for Q values (oracle/interpolation noise).
inline constexpr double kQNegativeTolerance = 1e-9;

/// Husimi grid for `modes` modes: [lo, hi]^(2N) with spacing h (default [-6, 6], h = 0.05).
PhaseGrid husimi_grid(int modes, double lo = -6.0, double hi = 6.0, double h = 0.05);

/// Q(alpha) = <alpha|rho|alpha> / pi^N.
double husimi_value(const FockState& rho, const CVec& alpha);

struct HusimiField {
  QField field;
  double truncation_leakage = 0.0;  // max(population near the cutoff, |1 - grid integral|)
  std::vector<std::string> warnings;
};

HusimiField husimi_from_fock(const FockState& rho, const PhaseGrid& grid, double time = 0.0,
                             double leak_warn = 1e-6);

/// d_t Q from the evolution series truncated at |m| <= max_order.
Vec series_rhs(const QField& q, const ComplexPolynomial& h, int max_order);

/// Generic real-coordinate Fokker-Planck operator
///   -sum_a d_a (A_a rho) + (1/2) sum_ab d_a d_b (D_ab rho)
/// on a grid, with drift and diffusion supplied as functions of the grid point.
Vec fokker_planck_rhs(const PhaseGrid& grid, const Vec& rho, const std::function<Vec(const Vec&)>& drift,
                      const std::function<Mat(const Vec&)>& diffusion);

/// Drift and diffusion parts of fpe_rhs, separately (used for the hbar-scaling property).
struct FpeParts {
  Vec drift;
  Vec diffusion;
  [[nodiscard]] Vec total() const { return drift + diffusion; }
};
FpeParts fpe_rhs_parts(const QField& q, const ComplexPolynomial& h);
Vec fpe_rhs(const QField& q, const ComplexPolynomial& h);

bool fpe_eligible(const ComplexPolynomial& h);

struct ResidualOptions {
  double delta = 1e-3;  // centred time-difference half step
  int margin = 3;       // masked outer cells
  double constant = 0.4;  // threshold = constant * (h^2 + delta^2)
};

struct ResidualRow {
  double time = 0.0;
  double max_residual = 0.0;
  double l2_residual = 0.0;
  double threshold = 0.0;
  bool pass = false;
  double series_l2_residual = -1.0;  // against the untruncated series (non-FPE symbols only)
};

struct ResidualReport {
  std::vector<ResidualRow> rows;
  std::string verdict;  // consistent | inconsistent | series-term-detected
  int n_max = 0;
  [[nodiscard]] bool all_pass() const;
};

ResidualReport fpe_residual_check(const ComplexPolynomial& h, const FockState& rho0, const std::vector<double>& times,
                                  const PhaseGrid& grid, const ResidualOptions& opts = {});

void write_residual_csv(std::ostream& out, const ResidualReport& report);

/// Integral of A_aW * Q over the grid.
double expectation(const ComplexPolynomial& a, const QField& q);
/// Fraction of |Q| mass within `cells` of the grid boundary (support-leakage indicator).
double boundary_mass_fraction(const QField& q, int cells = 2);

struct LiouvilleOptions {
  double max_cells_per_step = 8.0;  // characteristic displacement limit per substep
};

/// Drift-only transport Q(phi, t) = Q(Phi_{-t}(phi), 0) with RK4 characteristics in `steps`
/// substeps and a single quintic-Lagrange remap. Diffusion is ignored (hbar -> 0 limit).
QField liouville_evolve(const QField& q, const ComplexPolynomial& h, double t, int steps,
                        const LiouvilleOptions& opts = {});

/// max |det(d Phi_t / d phi) - 1| over the given points (phase-space volume preservation).
double flow_volume_deviation(const ComplexPolynomial& h, const std::vector<Vec>& points, double t, int steps);

}  // namespace tsq
