#include "tsq/fock.hpp"

#include <cmath>

namespace tsq {

namespace {

CMat kron(const CMat& a, const CMat& b) {
  CMat out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j)
      out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CVec kron(const CVec& a, const CVec& b) {
  CVec out(a.size() * b.size());
  for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a[i] * b;
  return out;
}

int ipow_int(int b, int e) {
  int r = 1;
  for (int i = 0; i < e; ++i) r *= b;
  return r;
}

double binom(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * (n - k + i) / i;
  return r;
}

CVec coherent_amplitudes(Complex beta, int n_max) {
  CVec c(n_max + 1);
  c[0] = std::exp(-0.5 * std::norm(beta));
  for (int n = 1; n <= n_max; ++n) c[n] = c[n - 1] * beta / std::sqrt(static_cast<double>(n));
  return c;
}

}  // namespace

FockState::FockState(int num_modes, int n_max, CMat rho) : num_modes_(num_modes), n_max_(n_max), rho_(std::move(rho)) {
  require(num_modes >= 1 && n_max >= 1, ErrorKind::dimension, "bad Fock space shape");
  const int dim = ipow_int(n_max + 1, num_modes);
  require(rho_.rows() == dim && rho_.cols() == dim, ErrorKind::dimension, "density matrix has wrong size");
}

FockState FockState::pure(int num_modes, int n_max, const CVec& psi) {
  const double norm = psi.norm();
  require(norm > 0.0, ErrorKind::dimension, "zero state vector");
  const CVec v = psi / norm;
  return FockState(num_modes, n_max, v * v.adjoint());
}

FockState FockState::vacuum(int num_modes, int n_max) {
  CVec psi = CVec::Zero(ipow_int(n_max + 1, num_modes));
  psi[0] = 1.0;
  return pure(num_modes, n_max, psi);
}

FockState FockState::number(int n, int n_max) {
  require(n <= n_max, ErrorKind::cutoff, "number state above cutoff");
  CVec psi = CVec::Zero(n_max + 1);
  psi[n] = 1.0;
  return pure(1, n_max, psi);
}

FockState FockState::coherent(const CVec& beta, int n_max) {
  CVec psi = coherent_amplitudes(beta[0], n_max);
  for (Eigen::Index k = 1; k < beta.size(); ++k) psi = kron(psi, coherent_amplitudes(beta[k], n_max));
  return pure(static_cast<int>(beta.size()), n_max, psi);
}

FockState FockState::even_cat(Complex beta, int n_max) {
  const CVec psi = coherent_amplitudes(beta, n_max) + coherent_amplitudes(-beta, n_max);
  return pure(1, n_max, psi);
}

void FockState::validate(double tol) const {
  require((rho_ - rho_.adjoint()).cwiseAbs().maxCoeff() <= tol, ErrorKind::dimension, "density matrix not hermitian");
  require(std::abs(rho_.trace() - Complex(1.0, 0.0)) <= tol, ErrorKind::dimension, "density matrix trace is not 1");
  Eigen::SelfAdjointEigenSolver<CMat> es(rho_, Eigen::EigenvaluesOnly);
  require(es.eigenvalues().minCoeff() >= -tol, ErrorKind::dimension, "density matrix not positive semidefinite");
}

double FockState::tail_population(int guard) const {
  const int levels = n_max_ + 1;
  const int threshold = n_max_ - guard;
  double worst = 0.0;
  for (int mode = 0; mode < num_modes_; ++mode) {
    const int stride = ipow_int(levels, num_modes_ - 1 - mode);
    double tail = 0.0;
    for (Eigen::Index i = 0; i < rho_.rows(); ++i) {
      const int n = static_cast<int>(i / stride) % levels;
      if (n > threshold) tail += rho_(i, i).real();
    }
    worst = std::max(worst, tail);
  }
  return worst;
}

CMat normal_monomial(int r, int s, int n_max) {
  const int levels = n_max + 1;
  CMat m = CMat::Zero(levels, levels);
  // <m| a+^r a^s |n> = sqrt(n!/j!) sqrt(m!/j!) with j = n - s = m - r >= 0.
  for (int n = s; n < levels; ++n) {
    const int j = n - s;
    const int row = j + r;
    if (row >= levels) continue;
    double v = 1.0;
    for (int k = j + 1; k <= n; ++k) v *= std::sqrt(static_cast<double>(k));
    for (int k = j + 1; k <= row; ++k) v *= std::sqrt(static_cast<double>(k));
    m(row, n) = v;
  }
  return m;
}

CMat operator_from_symbol(const ComplexPolynomial& h, int n_max) {
  const int modes = h.num_modes();
  const int dim = ipow_int(n_max + 1, modes);
  CMat op = CMat::Zero(dim, dim);
  for (const auto& [m, c] : h.terms()) {
    CMat term;
    for (int i = 0; i < modes; ++i) {
      const int p = m.alpha[i];
      const int q = m.alpha_star[i];
      CMat single = CMat::Zero(n_max + 1, n_max + 1);
      double kfact = 1.0;
      for (int k = 0; k <= std::min(p, q); ++k) {
        if (k > 0) kfact *= k;
        single += kfact * binom(p, k) * binom(q, k) * normal_monomial(q - k, p - k, n_max);
      }
      term = (i == 0) ? single : kron(term, single);
    }
    op += c * term;
  }
  return op;
}

FockEvolver::FockEvolver(const ComplexPolynomial& h, int num_modes, int n_max) : num_modes_(num_modes), n_max_(n_max) {
  require(h.num_modes() == num_modes, ErrorKind::dimension, "Hamiltonian and state mode counts differ");
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "Fock evolution needs a hermitian symbol");
  CMat op = operator_from_symbol(h, n_max);
  op = 0.5 * (op + op.adjoint()).eval();
  Eigen::SelfAdjointEigenSolver<CMat> es(op);
  vectors_ = es.eigenvectors();
  energies_ = es.eigenvalues();
}

FockState FockEvolver::evolve(const FockState& rho0, double t, double max_leak) const {
  require(rho0.num_modes() == num_modes_ && rho0.n_max() == n_max_, ErrorKind::dimension,
          "state does not match evolver Fock space");
  if (t == 0.0) return rho0;
  CVec phase(energies_.size());
  for (Eigen::Index k = 0; k < energies_.size(); ++k) phase[k] = std::exp(Complex(0.0, -energies_[k] * t));
  const CMat u = vectors_ * phase.asDiagonal() * vectors_.adjoint();
  CMat rho = u * rho0.rho() * u.adjoint();
  rho = 0.5 * (rho + rho.adjoint()).eval();
  FockState out(num_modes_, n_max_, std::move(rho));
  const double leak = out.tail_population(5);
  if (leak > max_leak)
    fail(ErrorKind::cutoff, "population " + std::to_string(leak) + " in top levels at t=" + std::to_string(t) +
                                "; increase n_max beyond " + std::to_string(n_max_));
  return out;
}

FockState fock_evolve(const FockState& rho, const ComplexPolynomial& h, double t) {
  return FockEvolver(h, rho.num_modes(), rho.n_max()).evolve(rho, t);
}

int choose_cutoff(const std::function<FockState(int)>& make_state, const ComplexPolynomial& h,
                  const std::vector<double>& times, int start, int cap, double tail_tol) {
  for (int n_max = start; n_max <= cap; n_max += 5) {
    const FockState rho0 = make_state(n_max);
    const FockEvolver evolver(h, rho0.num_modes(), n_max);
    bool ok = rho0.tail_population(5) < tail_tol;
    for (double t : times) {
      if (!ok) break;
      try {
        ok = evolver.evolve(rho0, t, 1.0).tail_population(5) < tail_tol;
      } catch (const Error&) {
        ok = false;
      }
    }
    if (ok) return n_max;
  }
  fail(ErrorKind::cutoff, "no cutoff up to n_max=" + std::to_string(cap) + " keeps the tail below " +
                              std::to_string(tail_tol) + "; suggested n_max > " + std::to_string(cap));
}

}  // namespace tsq
