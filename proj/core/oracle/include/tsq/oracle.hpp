#pragma once

// Brute-force reference computations. Nothing here includes or links the core library:
// every routine is rebuilt from first principles with dense linear algebra.

#include <complex>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <mutex>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace tsq::oracle {

using cplx = std::complex<double>;
using RMat = Eigen::MatrixXd;
using RVec = Eigen::VectorXd;
using CMatrix = Eigen::MatrixXcd;

struct OracleResult {
  std::string name;
  std::uint64_t digest = 0;
  std::vector<double> values;
  std::string notes;
  double tolerance = 0.0;
};

/// Digest of raw bytes (FNV-1a), used as the cache key.
std::uint64_t digest_bytes(const void* data, std::size_t size, std::uint64_t seed = 1469598103934665603ULL);
std::uint64_t digest_matrix(const RMat& m, std::uint64_t seed = 1469598103934665603ULL);

/// Memoises oracle results by (name, digest). Hits return the stored object unchanged.
class OracleCache {
 public:
  const OracleResult& get(const std::string& name, std::uint64_t digest,
                          const std::function<OracleResult()>& compute);
  [[nodiscard]] std::size_t size() const;
  [[nodiscard]] std::size_t hits() const { return hits_; }

 private:
  mutable std::mutex mutex_;
  std::map<std::pair<std::string, std::uint64_t>, OracleResult> store_;
  std::size_t hits_ = 0;
};

void write_oracle_csv(std::ostream& out, const std::vector<OracleResult>& results);

// ---- operator ordering

/// One ladder operator in a word: mode index and whether it is a creation operator.
struct Ladder {
  int mode = 0;
  bool dagger = false;
};

struct OperatorTerm {
  std::vector<Ladder> word;  // applied right to left, as written
  cplx coeff{1.0, 0.0};
};

/// Matrix of a polynomial in a, a^dagger on `modes` modes with cutoff n_max, built by
/// multiplying explicit ladder matrices in a space padded by the word length and then
/// truncating. Exact inside the truncated space.
CMatrix oracle_normal_ordering(const std::vector<OperatorTerm>& terms, int modes, int n_max);

/// Anti-Wick symbol term alpha^p alpha*^q (per mode) -> anti-normal word a^p a^dagger^q.
struct SymbolTerm {
  std::vector<int> p;
  std::vector<int> q;
  cplx coeff;
};
CMatrix oracle_symbol_operator(const std::vector<SymbolTerm>& symbol, int modes, int n_max);

// ---- Gaussian bridge action

struct QuadraticForm {
  RMat precision;  // P
  RVec linear;     // b
  double constant = 0.0;
};

/// Action of the midpoint-discretised bridge with drift M psi + c and diffusion magnitude d,
/// written as (1/2) z'Pz - b'z + const over the free variables
/// z = [y_0 | psi_1 .. psi_{K-1} | x_K].
QuadraticForm oracle_gaussian_quadratic_form(const RMat& m, const RVec& c, double d, const std::vector<double>& times,
                                             const RVec& x0, const RVec& yf);

/// Zero-residual path of the discrete recurrence with x(t0) = x0 and y(tf) = yf, found by
/// shooting on the unknown y(t0). Returned as the free-variable vector.
RVec oracle_shooting_bridge(const RMat& m, const RVec& c, const std::vector<double>& times, const RVec& x0,
                            const RVec& yf);

// ---- conditional independence

struct SchurResult {
  RMat conditional_cross;  // Sigma_AB - Sigma_AC Sigma_CC^-1 Sigma_CB
  double frobenius = 0.0;
  double partial_correlation = 0.0;  // Frobenius norm of the normalised cross block
};

SchurResult oracle_schur_ci(const RMat& covariance, const std::vector<int>& a, const std::vector<int>& b,
                            const std::vector<int>& c);

}  // namespace tsq::oracle
