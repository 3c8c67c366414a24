#pragma once

// Truncated Fock-space density matrices and the unitary oracle used to check the Husimi
// evolution equations. Basis ordering for N modes: |n_1 ... n_N>, mode 1 most significant.

#include <functional>
#include <vector>

#include "tsq/common.hpp"
#include "tsq/symbol.hpp"

namespace tsq {

class FockState {
 public:
  FockState(int num_modes, int n_max, CMat rho);

  static FockState vacuum(int num_modes, int n_max);
  static FockState number(int n, int n_max);
  static FockState coherent(const CVec& beta, int n_max);
  /// Normalised even cat state |beta> + |-beta> (single mode).
  static FockState even_cat(Complex beta, int n_max);
  static FockState pure(int num_modes, int n_max, const CVec& psi);

  [[nodiscard]] int num_modes() const { return num_modes_; }
  [[nodiscard]] int n_max() const { return n_max_; }
  [[nodiscard]] int levels() const { return n_max_ + 1; }
  [[nodiscard]] const CMat& rho() const { return rho_; }

  /// Throws unless hermitian, unit trace and PSD within tol.
  void validate(double tol = 1e-10) const;
  /// Largest population held in levels n > n_max - guard of any mode.
  [[nodiscard]] double tail_population(int guard = 5) const;
  [[nodiscard]] Complex trace_with(const CMat& op) const { return (op * rho_).trace(); }

 private:
  int num_modes_;
  int n_max_;
  CMat rho_;
};

/// Matrix of a^dagger^r a^s on one mode (exact inside the truncated space).
CMat normal_monomial(int r, int s, int n_max);

/// Operator whose anti-Wick symbol is `h`. Each alpha^p alpha*^q is read as the anti-normally
/// ordered a^p a^dagger^q and reordered exactly: a^p a+^q = sum_k k! C(p,k) C(q,k) a+^(q-k) a^(p-k).
CMat operator_from_symbol(const ComplexPolynomial& h, int n_max);

/// Caches the eigendecomposition of the truncated Hamiltonian for repeated evolution times.
class FockEvolver {
 public:
  FockEvolver(const ComplexPolynomial& h, int num_modes, int n_max);
  /// rho(t) = U rho U^dagger with U = exp(-i H t). Throws a cutoff error when the evolved
  /// state leaks more than `max_leak` into the top five levels.
  [[nodiscard]] FockState evolve(const FockState& rho0, double t, double max_leak = 1e-6) const;

 private:
  int num_modes_;
  int n_max_;
  CMat vectors_;
  Vec energies_;
};

FockState fock_evolve(const FockState& rho, const ComplexPolynomial& h, double t);

/// Smallest n_max in [start, cap] (step 5) whose evolved tail population beyond n_max - 5 is
/// below `tail_tol` at every requested time. Throws a cutoff error when the cap is reached.
int choose_cutoff(const std::function<FockState(int)>& make_state, const ComplexPolynomial& h,
                  const std::vector<double>& times, int start = 20, int cap = 80, double tail_tol = 1e-8);

}  // namespace tsq
