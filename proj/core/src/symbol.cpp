#include "tsq/symbol.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <sstream>

namespace tsq {

namespace {

constexpr double kSqrt2 = 1.4142135623730951;

double falling_factorial(int n, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= static_cast<double>(n - i);
  return r;
}

Complex ipow(Complex z, int n) {
  Complex r{1.0, 0.0};
  for (int i = 0; i < n; ++i) r *= z;
  return r;
}

}  // namespace

MultiIndex::MultiIndex(std::vector<int> a, std::vector<int> b)
    : alpha(std::move(a)), alpha_star(std::move(b)) {
  require(alpha.size() == alpha_star.size(), ErrorKind::dimension,
          "multi-index alpha/alpha* power vectors differ in length");
  for (std::size_t i = 0; i < alpha.size(); ++i)
    require(alpha[i] >= 0 && alpha_star[i] >= 0, ErrorKind::dimension, "negative power in multi-index");
}

int MultiIndex::total_degree() const {
  int s = 0;
  for (std::size_t i = 0; i < alpha.size(); ++i) s += alpha[i] + alpha_star[i];
  return s;
}

ComplexPolynomial::ComplexPolynomial(int num_modes, double hbar) : num_modes_(num_modes), hbar_(hbar) {
  require(num_modes > 0, ErrorKind::dimension, "polynomial needs at least one mode");
  require(hbar > 0.0, ErrorKind::config, "hbar must be positive");
}

ComplexPolynomial& ComplexPolynomial::add_term(const MultiIndex& m, Complex c) {
  require(m.num_modes() == num_modes_, ErrorKind::dimension, "term mode count does not match polynomial");
  auto it = terms_.find(m);
  if (it == terms_.end()) {
    if (c != Complex{}) terms_.emplace(m, c);
    return *this;
  }
  it->second += c;
  if (it->second == Complex{}) terms_.erase(it);
  return *this;
}

Complex ComplexPolynomial::coefficient(const MultiIndex& m) const {
  auto it = terms_.find(m);
  return it == terms_.end() ? Complex{} : it->second;
}

ComplexPolynomial ComplexPolynomial::with_hbar(double hbar) const {
  ComplexPolynomial out(num_modes_, hbar);
  out.terms_ = terms_;
  return out;
}

int ComplexPolynomial::max_degree_per_variable() const {
  int d = 0;
  for (const auto& [m, c] : terms_)
    for (int i = 0; i < num_modes_; ++i) d = std::max({d, m.alpha[i], m.alpha_star[i]});
  return d;
}

int ComplexPolynomial::total_degree() const {
  int d = 0;
  for (const auto& [m, c] : terms_) d = std::max(d, m.total_degree());
  return d;
}

bool ComplexPolynomial::is_hermitian(double tol) const {
  for (const auto& [m, c] : terms_) {
    const Complex mirror = coefficient(MultiIndex(m.alpha_star, m.alpha));
    if (std::abs(c - std::conj(mirror)) > tol * std::max(1.0, std::abs(c))) return false;
  }
  return true;
}

Complex ComplexPolynomial::evaluate(const CVec& alpha) const {
  require(alpha.size() == num_modes_, ErrorKind::dimension, "evaluation point has wrong mode count");
  Complex sum{};
  for (const auto& [m, c] : terms_) {
    Complex t = c;
    for (int i = 0; i < num_modes_; ++i)
      t *= ipow(alpha[i], m.alpha[i]) * ipow(std::conj(alpha[i]), m.alpha_star[i]);
    sum += t;
  }
  return sum;
}

Complex ComplexPolynomial::evaluate_phi(const Vec& phi) const { return evaluate(phi_to_alpha(phi)); }

ComplexPolynomial& ComplexPolynomial::operator+=(const ComplexPolynomial& other) {
  require(other.num_modes_ == num_modes_, ErrorKind::dimension, "adding polynomials with different mode counts");
  for (const auto& [m, c] : other.terms_) add_term(m, c);
  return *this;
}

ComplexPolynomial operator*(Complex s, ComplexPolynomial p) {
  if (s == Complex{}) {
    p.terms_.clear();
    return p;
  }
  for (auto& [m, c] : p.terms_) c *= s;
  return p;
}

bool ComplexPolynomial::operator==(const ComplexPolynomial& other) const {
  return num_modes_ == other.num_modes_ && hbar_ == other.hbar_ && terms_ == other.terms_;
}

ComplexPolynomial wirtinger_derivative(const ComplexPolynomial& p, const std::vector<int>& orders,
                                       bool conjugate) {
  require(static_cast<int>(orders.size()) == p.num_modes(), ErrorKind::dimension,
          "derivative multi-index has wrong mode count");
  for (int o : orders) require(o >= 0, ErrorKind::dimension, "negative derivative order");
  ComplexPolynomial out(p.num_modes(), p.hbar());
  for (const auto& [m, c] : p.terms()) {
    MultiIndex r = m;
    double factor = 1.0;
    bool vanishes = false;
    for (int i = 0; i < p.num_modes() && !vanishes; ++i) {
      int& power = conjugate ? r.alpha_star[i] : r.alpha[i];
      if (power < orders[i]) {
        vanishes = true;
        break;
      }
      factor *= falling_factorial(power, orders[i]);
      power -= orders[i];
    }
    if (!vanishes) out.add_term(r, c * factor);
  }
  return out;
}

CVec phi_to_alpha(const Vec& phi) {
  require(phi.size() % 2 == 0, ErrorKind::dimension, "phase-space vector must have even length");
  const Eigen::Index n = phi.size() / 2;
  CVec a(n);
  for (Eigen::Index i = 0; i < n; ++i) a[i] = Complex(phi[i], phi[n + i]) / kSqrt2;
  return a;
}

Vec alpha_to_phi(const CVec& alpha) {
  const Eigen::Index n = alpha.size();
  Vec phi(2 * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    phi[i] = kSqrt2 * alpha[i].real();
    phi[n + i] = kSqrt2 * alpha[i].imag();
  }
  return phi;
}

DriftField::DriftField(const ComplexPolynomial& h) : num_modes_(h.num_modes()) {
  const int n = num_modes_;
  auto unit = [n](int i) {
    std::vector<int> o(n, 0);
    o[i] = 1;
    return o;
  };
  for (int i = 0; i < n; ++i) dbar_.push_back(wirtinger_derivative(h, unit(i), true));
  d_dbar_.assign(n, {});
  dbar_dbar_.assign(n, {});
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i) {
      d_dbar_[j].push_back(wirtinger_derivative(dbar_[i], unit(j), false));
      dbar_dbar_[j].push_back(wirtinger_derivative(dbar_[i], unit(j), true));
    }
}

Vec DriftField::operator()(const Vec& phi) const {
  require(phi.size() == dim(), ErrorKind::dimension, "drift evaluated at wrong dimension");
  const CVec a = phi_to_alpha(phi);
  Vec out(dim());
  for (int i = 0; i < num_modes_; ++i) {
    const Complex v = Complex(0.0, -1.0) * dbar_[i].evaluate(a);
    out[i] = kSqrt2 * v.real();
    out[num_modes_ + i] = kSqrt2 * v.imag();
  }
  return out;
}

Mat DriftField::jacobian(const Vec& phi) const {
  const CVec a = phi_to_alpha(phi);
  const int n = num_modes_;
  Mat jac(2 * n, 2 * n);
  const Complex mi(0.0, -1.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const Complex p = d_dbar_[j][i].evaluate(a);
      const Complex q = dbar_dbar_[j][i].evaluate(a);
      const Complex dv_dx = mi * (p + q) / kSqrt2;
      const Complex dv_dy = (p - q) / kSqrt2;
      jac(i, j) = kSqrt2 * dv_dx.real();
      jac(i, n + j) = kSqrt2 * dv_dy.real();
      jac(n + i, j) = kSqrt2 * dv_dx.imag();
      jac(n + i, n + j) = kSqrt2 * dv_dy.imag();
    }
  return jac;
}

double DriftField::divergence(const Vec& phi) const { return jacobian(phi).trace(); }

DriftField drift_field(const ComplexPolynomial& h) {
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "drift requires a hermitian (real-valued) symbol");
  return DriftField(h);
}

Mat diffusion_matrix(const ComplexPolynomial& h, const Vec& phi) {
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "diffusion requires a hermitian symbol");
  const int n = h.num_modes();
  require(phi.size() == 2 * n, ErrorKind::dimension, "diffusion evaluated at wrong dimension");
  const CVec a = phi_to_alpha(phi);
  Mat d = Mat::Zero(2 * n, 2 * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      std::vector<int> o(n, 0);
      o[i] += 1;
      o[j] += 1;
      const Complex c = wirtinger_derivative(h, o, true).evaluate(a);
      d(i, j) = -h.hbar() * c.imag();
      d(n + i, n + j) = h.hbar() * c.imag();
      d(i, n + j) = h.hbar() * c.real();
      d(n + j, i) = h.hbar() * c.real();
    }
  return d;
}

bool has_constant_diffusion(const ComplexPolynomial& h) {
  const int n = h.num_modes();
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) {
      std::vector<int> o(n, 0);
      o[i] += 1;
      o[j] += 1;
      const ComplexPolynomial second = wirtinger_derivative(h, o, true);
      for (const auto& [m, c] : second.terms())
        if (m.total_degree() != 0) return false;
    }
  return true;
}

Vec QuadratureFrame::forward(const CVec& alpha) const { return to_frame(alpha_to_phi(alpha)); }

CVec QuadratureFrame::inverse(const Vec& phi_frame) const { return phi_to_alpha(to_quadrature(phi_frame)); }

QuadratureFrame diagonalize_diffusion(const ComplexPolynomial& h, double balance_tol) {
  require(h.is_hermitian(), ErrorKind::unsupported_hamiltonian, "frame requires a hermitian symbol");
  require(has_constant_diffusion(h), ErrorKind::unsupported_hamiltonian,
          "diffusion depends on phase-space position; no constant quadrature frame exists");
  const int n = h.num_modes();
  const Mat d = diffusion_matrix(h, Vec::Zero(2 * n));
  QuadratureFrame frame;
  frame.num_modes = n;
  const double scale = d.cwiseAbs().maxCoeff();
  if (scale == 0.0) {
    frame.rotation = Mat::Identity(2 * n, 2 * n);
    frame.d = 0.0;
    frame.degenerate = true;
    return frame;
  }
  Eigen::SelfAdjointEigenSolver<Mat> es(d);
  const Vec& ev = es.eigenvalues();  // ascending: negatives first
  const double dpos = ev.tail(n).mean();
  for (int k = 0; k < n; ++k) {
    const double pos = ev[n + k];
    const double neg = ev[k];
    if (std::abs(pos - dpos) > balance_tol * scale || std::abs(neg + dpos) > balance_tol * scale || pos <= 0.0)
      fail(ErrorKind::not_traceless, "diffusion spectrum is not balanced +/-d (eigenvalues " +
                                         std::to_string(neg) + ", " + std::to_string(pos) + ")");
  }
  Mat o(2 * n, 2 * n);
  for (int k = 0; k < n; ++k) {
    o.col(k) = es.eigenvectors().col(n + k);      // positive diffusion -> x block
    o.col(n + k) = es.eigenvectors().col(k);      // negative diffusion -> y block
  }
  for (int c = 0; c < 2 * n; ++c) {
    Eigen::Index imax = 0;
    o.col(c).cwiseAbs().maxCoeff(&imax);
    if (o(imax, c) < 0) o.col(c) = -o.col(c);
  }
  frame.rotation = o;
  frame.d = dpos;
  return frame;
}

ComplexPolynomial parse_symbol(std::istream& in) {
  int modes = -1;
  double hbar = 1.0;
  std::vector<std::vector<double>> rows;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto pos = line.find('#'); pos != std::string::npos) line.erase(pos);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    if (first == "modes") {
      require(static_cast<bool>(ls >> modes) && modes > 0, ErrorKind::parse,
              "line " + std::to_string(lineno) + ": bad modes header");
      continue;
    }
    if (first == "hbar") {
      require(static_cast<bool>(ls >> hbar) && hbar > 0, ErrorKind::parse,
              "line " + std::to_string(lineno) + ": bad hbar header");
      continue;
    }
    std::vector<double> vals;
    std::istringstream all(line);
    double v;
    while (all >> v) vals.push_back(v);
    require(all.eof(), ErrorKind::parse, "line " + std::to_string(lineno) + ": non-numeric token");
    require(vals.size() >= 4 && vals.size() % 2 == 0, ErrorKind::parse,
            "line " + std::to_string(lineno) + ": expected 2N powers plus re im");
    rows.push_back(std::move(vals));
  }
  if (modes < 0) {
    require(!rows.empty(), ErrorKind::parse, "empty symbol file without modes header");
    modes = static_cast<int>(rows.front().size() - 2) / 2;
  }
  ComplexPolynomial p(modes, hbar);
  for (const auto& r : rows) {
    require(static_cast<int>(r.size()) == 2 * modes + 2, ErrorKind::parse, "term with wrong number of powers");
    std::vector<int> a(modes), b(modes);
    for (int i = 0; i < modes; ++i) {
      a[i] = static_cast<int>(r[i]);
      b[i] = static_cast<int>(r[modes + i]);
      require(a[i] == r[i] && b[i] == r[modes + i] && a[i] >= 0 && b[i] >= 0, ErrorKind::parse,
              "powers must be nonnegative integers");
    }
    p.add_term(MultiIndex(a, b), Complex(r[2 * modes], r[2 * modes + 1]));
  }
  return p;
}

ComplexPolynomial parse_symbol_text(const std::string& text) {
  std::istringstream in(text);
  return parse_symbol(in);
}

std::string serialize_symbol(const ComplexPolynomial& p) {
  std::ostringstream out;
  out << "# anti-Wick symbol: powers_alpha powers_alpha_star re im\n";
  out << "modes " << p.num_modes() << "\n";
  out << "hbar " << fmt_num(p.hbar()) << "\n";
  for (const auto& [m, c] : p.terms()) {
    for (int v : m.alpha) out << v << ' ';
    for (int v : m.alpha_star) out << v << ' ';
    out << fmt_num(c.real()) << ' ' << fmt_num(c.imag()) << "\n";
  }
  return out.str();
}

namespace presets {

ComplexPolynomial harmonic(double omega, double hbar) {
  ComplexPolynomial h(1, hbar);
  h.add_term({{1}, {1}}, omega);
  h.add_term({{0}, {0}}, -omega);
  return h;
}

ComplexPolynomial paramp(double kappa, double hbar) {
  ComplexPolynomial h(1, hbar);
  h.add_term({{0}, {2}}, Complex(0.0, kappa / 2));
  h.add_term({{2}, {0}}, Complex(0.0, -kappa / 2));
  return h;
}

ComplexPolynomial coupled(double kappa, double g, double hbar) {
  ComplexPolynomial h(2, hbar);
  for (int i = 0; i < 2; ++i) {
    std::vector<int> two(2, 0), zero(2, 0);
    two[i] = 2;
    h.add_term({zero, two}, Complex(0.0, kappa / 2));
    h.add_term({two, zero}, Complex(0.0, -kappa / 2));
  }
  h.add_term({{1, 0}, {0, 1}}, g);
  h.add_term({{0, 1}, {1, 0}}, g);
  return h;
}

ComplexPolynomial squeezed_rotor(double kappa, double omega, double hbar) {
  ComplexPolynomial h = paramp(kappa, hbar);
  h.add_term({{1}, {1}}, omega);
  return h;
}

ComplexPolynomial quartic(double lambda, double omega, double hbar) {
  // lambda (alpha + alpha*)^4, expanded binomially
  ComplexPolynomial h = harmonic(omega, hbar);
  const int binom4[5] = {1, 4, 6, 4, 1};
  for (int k = 0; k <= 4; ++k) h.add_term({{k}, {4 - k}}, lambda * binom4[k]);
  return h;
}

ComplexPolynomial kerr(double chi, double omega, double hbar) {
  ComplexPolynomial h = harmonic(omega, hbar);
  h.add_term({{2}, {2}}, chi);
  return h;
}

}  // namespace presets

}  // namespace tsq
