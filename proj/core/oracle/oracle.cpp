#include "tsq/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <ostream>
#include <stdexcept>

namespace tsq::oracle {

std::uint64_t digest_bytes(const void* data, std::size_t size, std::uint64_t seed) {
  const auto* p = static_cast<const unsigned char*>(data);
  std::uint64_t h = seed;
  for (std::size_t i = 0; i < size; ++i) {
    h ^= p[i];
    h *= 1099511628211ULL;
  }
  return h;
}

std::uint64_t digest_matrix(const RMat& m, std::uint64_t seed) {
  const long long shape[2] = {static_cast<long long>(m.rows()), static_cast<long long>(m.cols())};
  std::uint64_t h = digest_bytes(shape, sizeof shape, seed);
  return digest_bytes(m.data(), sizeof(double) * static_cast<std::size_t>(m.size()), h);
}

const OracleResult& OracleCache::get(const std::string& name, std::uint64_t digest,
                                     const std::function<OracleResult()>& compute) {
  std::lock_guard lock(mutex_);
  const auto key = std::make_pair(name, digest);
  auto it = store_.find(key);
  if (it != store_.end()) {
    ++hits_;
    return it->second;
  }
  OracleResult r = compute();
  r.name = name;
  r.digest = digest;
  return store_.emplace(key, std::move(r)).first->second;
}

std::size_t OracleCache::size() const {
  std::lock_guard lock(mutex_);
  return store_.size();
}

void write_oracle_csv(std::ostream& out, const std::vector<OracleResult>& results) {
  out << "oracle,digest,index,value,tolerance,notes\n";
  char buf[64];
  for (const auto& r : results)
    for (std::size_t i = 0; i < r.values.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", r.values[i]);
      out << r.name << ',' << std::hex << r.digest << std::dec << ',' << i << ',' << buf << ',' << r.tolerance << ','
          << r.notes << '\n';
    }
}

// ---- operators

namespace {

CMatrix kron(const CMatrix& a, const CMatrix& b) {
  CMatrix out(a.rows() * b.rows(), a.cols() * b.cols());
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) out.block(i * b.rows(), j * b.cols(), b.rows(), b.cols()) = a(i, j) * b;
  return out;
}

CMatrix annihilator(int levels) {
  CMatrix a = CMatrix::Zero(levels, levels);
  for (int n = 1; n < levels; ++n) a(n - 1, n) = std::sqrt(static_cast<double>(n));
  return a;
}

// Ladder operator on `mode` embedded in the full product space.
CMatrix embed(const CMatrix& single, int mode, int modes, int levels) {
  CMatrix out = CMatrix::Identity(1, 1);
  for (int k = 0; k < modes; ++k) out = kron(out, k == mode ? single : CMatrix::Identity(levels, levels));
  return out;
}

// Restriction of a padded-space matrix to the n_max cutoff.
CMatrix truncate(const CMatrix& big, int modes, int big_levels, int levels) {
  int dim = 1;
  for (int k = 0; k < modes; ++k) dim *= levels;
  std::vector<int> map(dim);
  for (int i = 0; i < dim; ++i) {
    int rem = i, big_index = 0, stride = 1;
    for (int k = modes - 1; k >= 0; --k) {
      big_index += (rem % levels) * stride;
      rem /= levels;
      stride *= big_levels;
    }
    map[i] = big_index;
  }
  CMatrix out(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) out(i, j) = big(map[i], map[j]);
  return out;
}

}  // namespace

CMatrix oracle_normal_ordering(const std::vector<OperatorTerm>& terms, int modes, int n_max) {
  if (modes < 1 || n_max < 1) throw std::invalid_argument("oracle_normal_ordering: bad space");
  std::size_t longest = 0;
  for (const auto& t : terms) longest = std::max(longest, t.word.size());
  const int levels = n_max + 1;
  const int big = levels + static_cast<int>(longest);
  const CMatrix a = annihilator(big);
  std::vector<CMatrix> lower, raise;
  for (int k = 0; k < modes; ++k) {
    lower.push_back(embed(a, k, modes, big));
    raise.push_back(lower.back().adjoint());
  }
  const Eigen::Index dim = lower[0].rows();
  CMatrix total = CMatrix::Zero(dim, dim);
  for (const auto& t : terms) {
    CMatrix prod = CMatrix::Identity(dim, dim);
    for (const auto& l : t.word) {
      if (l.mode < 0 || l.mode >= modes) throw std::invalid_argument("oracle_normal_ordering: mode out of range");
      prod = prod * (l.dagger ? raise[l.mode] : lower[l.mode]);
    }
    total += t.coeff * prod;
  }
  return truncate(total, modes, big, levels);
}

CMatrix oracle_symbol_operator(const std::vector<SymbolTerm>& symbol, int modes, int n_max) {
  std::vector<OperatorTerm> terms;
  for (const auto& s : symbol) {
    OperatorTerm t;
    t.coeff = s.coeff;
    // per mode: a^p a+^q; distinct modes commute so mode order is irrelevant
    for (int k = 0; k < modes; ++k) {
      for (int i = 0; i < s.p[k]; ++i) t.word.push_back({k, false});
      for (int i = 0; i < s.q[k]; ++i) t.word.push_back({k, true});
    }
    terms.push_back(std::move(t));
  }
  return oracle_normal_ordering(terms, modes, n_max);
}

// ---- Gaussian quadratic form

namespace {

int free_slot(int n, int steps, int k, int c) {
  if (k == 0) return c >= n ? c - n : -1;
  if (k == steps) return c < n ? n + 2 * n * (steps - 1) + c : -1;
  return n + 2 * n * (k - 1) + c;
}

}  // namespace

QuadraticForm oracle_gaussian_quadratic_form(const RMat& m, const RVec& c, double d, const std::vector<double>& times,
                                             const RVec& x0, const RVec& yf) {
  const int dim = static_cast<int>(m.rows());
  const int n = dim / 2;
  const int steps = static_cast<int>(times.size()) - 1;
  const int total = dim * (steps + 1);
  // Full quadratic form over every path value: S = sum_k (dt/2d)|L1 psi_k + L2 psi_{k+1} - c|^2 + dt tr(M)/2
  RMat q = RMat::Zero(total, total);
  RVec lin = RVec::Zero(total);
  double cst = 0.0;
  for (int k = 0; k < steps; ++k) {
    const double dt = times[k + 1] - times[k];
    RMat r = RMat::Zero(dim, total);
    r.block(0, k * dim, dim, dim) = -RMat::Identity(dim, dim) / dt - 0.5 * m;
    r.block(0, (k + 1) * dim, dim, dim) = RMat::Identity(dim, dim) / dt - 0.5 * m;
    q += (dt / d) * r.transpose() * r;
    lin += (dt / d) * r.transpose() * c;
    cst += dt / (2 * d) * c.squaredNorm() + 0.5 * dt * m.trace();
  }
  // split into free and pinned entries
  RVec pinned = RVec::Zero(total);
  std::vector<int> free_of(total, -1);
  for (int k = 0; k <= steps; ++k)
    for (int cc = 0; cc < dim; ++cc) {
      const int idx = k * dim + cc;
      free_of[idx] = free_slot(n, steps, k, cc);
      if (free_of[idx] < 0) pinned[idx] = (k == 0) ? x0[cc] : yf[cc - n];
    }
  const int nf = 2 * n * steps;
  QuadraticForm out;
  out.precision = RMat::Zero(nf, nf);
  out.linear = RVec::Zero(nf);
  const RVec qp = q * pinned;
  for (int i = 0; i < total; ++i) {
    if (free_of[i] < 0) continue;
    out.linear[free_of[i]] = lin[i] - qp[i];
    for (int j = 0; j < total; ++j)
      if (free_of[j] >= 0) out.precision(free_of[i], free_of[j]) = q(i, j);
  }
  out.constant = 0.5 * pinned.dot(qp) - lin.dot(pinned) + cst;
  return out;
}

RVec oracle_shooting_bridge(const RMat& m, const RVec& c, const std::vector<double>& times, const RVec& x0,
                            const RVec& yf) {
  const int dim = static_cast<int>(m.rows());
  const int n = dim / 2;
  const int steps = static_cast<int>(times.size()) - 1;
  const RMat id = RMat::Identity(dim, dim);
  // psi_{k+1} = (I/dt - M/2)^-1 ((I/dt + M/2) psi_k + c): zero residual on every step
  auto propagate = [&](const RVec& y0, std::vector<RVec>* path) {
    RVec psi(dim);
    psi << x0, y0;
    if (path) path->push_back(psi);
    for (int k = 0; k < steps; ++k) {
      const double dt = times[k + 1] - times[k];
      psi = (id / dt - 0.5 * m).fullPivLu().solve((id / dt + 0.5 * m) * psi + c);
      if (path) path->push_back(psi);
    }
    return RVec(psi.tail(n));
  };
  // y_K is affine in y_0: solve for the y_0 that hits yf
  const RVec base = propagate(RVec::Zero(n), nullptr);
  RMat sens(n, n);
  for (int j = 0; j < n; ++j) sens.col(j) = propagate(RVec::Unit(n, j), nullptr) - base;
  const RVec y0 = sens.fullPivLu().solve(yf - base);
  std::vector<RVec> path;
  propagate(y0, &path);
  RVec z(2 * n * steps);
  for (int k = 0; k <= steps; ++k)
    for (int cc = 0; cc < dim; ++cc) {
      const int s = free_slot(n, steps, k, cc);
      if (s >= 0) z[s] = path[k][cc];
    }
  return z;
}

SchurResult oracle_schur_ci(const RMat& cov, const std::vector<int>& a, const std::vector<int>& b,
                            const std::vector<int>& c) {
  auto block = [&](const std::vector<int>& r, const std::vector<int>& s) {
    RMat out(r.size(), s.size());
    for (std::size_t i = 0; i < r.size(); ++i)
      for (std::size_t j = 0; j < s.size(); ++j) out(i, j) = cov(r[i], s[j]);
    return out;
  };
  const RMat sab = block(a, b);
  RMat cond = sab;
  RMat caa = block(a, a), cbb = block(b, b);
  if (!c.empty()) {
    const RMat scc = block(c, c);
    const RMat sca = block(c, a), scb = block(c, b);
    const auto solver = scc.fullPivLu();
    cond = sab - sca.transpose() * solver.solve(scb);
    caa = caa - sca.transpose() * solver.solve(sca);
    cbb = cbb - scb.transpose() * solver.solve(scb);
  }
  SchurResult r;
  r.conditional_cross = cond;
  r.frobenius = cond.norm();
  RMat corr = cond;
  for (Eigen::Index i = 0; i < corr.rows(); ++i)
    for (Eigen::Index j = 0; j < corr.cols(); ++j) {
      const double s = std::sqrt(std::max(caa(i, i), 0.0) * std::max(cbb(j, j), 0.0));
      corr(i, j) = s > 0 ? corr(i, j) / s : 0.0;
    }
  r.partial_correlation = corr.norm();
  return r;
}

}  // namespace tsq::oracle
