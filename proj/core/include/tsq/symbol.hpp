#pragma once

// Anti-Wick symbols as complex polynomials in (alpha, alpha*), Wirtinger calculus, and the
// real-coordinate drift/diffusion fields they induce.
//
// Coordinate convention (used everywhere in tsq): per mode i,
//     alpha_i = (x_i + i y_i) / sqrt(2),
// and a real phase-space vector is ordered phi = (x_1..x_N, y_1..y_N). With this map
//     d/d alpha   = (d/dx - i d/dy) / sqrt(2),   d/d alpha* = (d/dx + i d/dy) / sqrt(2),
// and the area element is d^2 alpha = dx dy / 2.
//
// Diffusion normalisation: the second-order part of the truncated Husimi evolution equals
// (1/2) sum_ab d_a d_b (D_ab Q) with
//     D = hbar * [[-Im C, Re C], [Re C, Im C]],   C_ij = d^2 H / (d alpha_i* d alpha_j*).
// D is traceless by construction and its spectrum is symmetric about zero.

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "tsq/common.hpp"

namespace tsq {

/// Powers of alpha and alpha* for one monomial.
struct MultiIndex {
  std::vector<int> alpha;
  std::vector<int> alpha_star;

  MultiIndex() = default;
  MultiIndex(std::vector<int> a, std::vector<int> b);

  [[nodiscard]] int num_modes() const { return static_cast<int>(alpha.size()); }
  [[nodiscard]] int total_degree() const;
  auto operator<=>(const MultiIndex&) const = default;
};

/// Finitely supported map MultiIndex -> complex coefficient. Zero coefficients are never stored.
class ComplexPolynomial {
 public:
  explicit ComplexPolynomial(int num_modes, double hbar = 1.0);

  [[nodiscard]] int num_modes() const { return num_modes_; }
  [[nodiscard]] double hbar() const { return hbar_; }
  [[nodiscard]] const std::map<MultiIndex, Complex>& terms() const { return terms_; }
  [[nodiscard]] bool empty() const { return terms_.empty(); }

  ComplexPolynomial& add_term(const MultiIndex& m, Complex c);
  [[nodiscard]] Complex coefficient(const MultiIndex& m) const;

  [[nodiscard]] ComplexPolynomial with_hbar(double hbar) const;

  /// Largest power of any single alpha_i or alpha_i* appearing in any term.
  [[nodiscard]] int max_degree_per_variable() const;
  [[nodiscard]] int total_degree() const;

  /// coeff(a, b) == conj(coeff(b, a)) within tol, i.e. the symbol is real-valued.
  [[nodiscard]] bool is_hermitian(double tol = 1e-12) const;

  [[nodiscard]] Complex evaluate(const CVec& alpha) const;
  [[nodiscard]] Complex evaluate_phi(const Vec& phi) const;

  ComplexPolynomial& operator+=(const ComplexPolynomial& other);
  friend ComplexPolynomial operator+(ComplexPolynomial a, const ComplexPolynomial& b) { return a += b; }
  friend ComplexPolynomial operator*(Complex s, ComplexPolynomial p);
  bool operator==(const ComplexPolynomial& other) const;

 private:
  int num_modes_;
  double hbar_;
  std::map<MultiIndex, Complex> terms_;
};

/// d^orders p / d alpha^orders (or d alpha*^orders when conjugate is set). Exact coefficients.
ComplexPolynomial wirtinger_derivative(const ComplexPolynomial& p, const std::vector<int>& orders,
                                       bool conjugate);

CVec phi_to_alpha(const Vec& phi);
Vec alpha_to_phi(const CVec& alpha);

/// Drift (continuity velocity) of the first-order bracket, in quadrature coordinates:
/// alpha_i' = -i dH/d alpha_i*, mapped to (x', y').
class DriftField {
 public:
  explicit DriftField(const ComplexPolynomial& h);
  [[nodiscard]] Vec operator()(const Vec& phi) const;
  [[nodiscard]] Mat jacobian(const Vec& phi) const;
  [[nodiscard]] double divergence(const Vec& phi) const;
  [[nodiscard]] int dim() const { return 2 * num_modes_; }

 private:
  int num_modes_;
  std::vector<ComplexPolynomial> dbar_;                 // dH/d alpha_i*
  std::vector<std::vector<ComplexPolynomial>> d_dbar_;  // d^2 H / d alpha_j d alpha_i*
  std::vector<std::vector<ComplexPolynomial>> dbar_dbar_;
};

DriftField drift_field(const ComplexPolynomial& h);

/// Traceless diffusion matrix at phi (see header comment for normalisation).
Mat diffusion_matrix(const ComplexPolynomial& h, const Vec& phi);

/// True if every d^2 H / d alpha_i* d alpha_j* is a constant polynomial.
bool has_constant_diffusion(const ComplexPolynomial& h);

/// Orthogonal frame phi_frame = O^T phi_quad in which D = diag(d I, -d I).
struct QuadratureFrame {
  int num_modes = 1;
  Mat rotation;  // O; columns are frame axes expressed in quadrature coordinates
  double d = 0.0;
  bool degenerate = false;  // D == 0, no diffusion to diagonalise

  [[nodiscard]] Vec forward(const CVec& alpha) const;
  [[nodiscard]] CVec inverse(const Vec& phi_frame) const;
  [[nodiscard]] Vec to_frame(const Vec& phi_quad) const { return rotation.transpose() * phi_quad; }
  [[nodiscard]] Vec to_quadrature(const Vec& phi_frame) const { return rotation * phi_frame; }
  [[nodiscard]] Mat transform_matrix(const Mat& m_quad) const {
    return rotation.transpose() * m_quad * rotation;
  }
};

QuadratureFrame diagonalize_diffusion(const ComplexPolynomial& h, double balance_tol = 1e-9);

/// Text format: optional "modes N" / "hbar v" header lines, '#' comments, then one term per
/// line "p_1..p_N q_1..q_N re im" (alpha powers, alpha* powers, coefficient).
ComplexPolynomial parse_symbol(std::istream& in);
ComplexPolynomial parse_symbol_text(const std::string& text);
std::string serialize_symbol(const ComplexPolynomial& p);

/// Named presets used by the harness and tests.
namespace presets {
ComplexPolynomial harmonic(double omega = 1.0, double hbar = 1.0);
ComplexPolynomial paramp(double kappa = 0.5, double hbar = 1.0);
/// Paramp on two modes plus a beam-splitter exchange g(alpha_1 alpha_2* + c.c.).
ComplexPolynomial coupled(double kappa = 0.5, double g = 0.3, double hbar = 1.0);
/// Single-mode paramp plus detuning rotation omega*alpha alpha*; mixes the frame blocks.
ComplexPolynomial squeezed_rotor(double kappa = 0.5, double omega = 0.4, double hbar = 1.0);
/// Harmonic oscillator plus lambda*(alpha + alpha*)^4, an x^4 anharmonicity (quartic in each variable).
ComplexPolynomial quartic(double lambda = 0.1, double omega = 1.0, double hbar = 1.0);
/// Harmonic oscillator plus chi*(alpha alpha*)^2 (Kerr); still quadratic per variable.
ComplexPolynomial kerr(double chi = 0.1, double omega = 1.0, double hbar = 1.0);
}  // namespace presets

}  // namespace tsq
