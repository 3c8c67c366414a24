#pragma once

#include <complex>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace tsq {

using Real = double;
using Complex = std::complex<double>;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;

enum class ErrorKind {
  dimension,
  unsupported_hamiltonian,
  not_traceless,
  unsupported_order,
  cutoff,
  cfl,
  degenerate_measure,
  non_normalizable,
  sampler_failure,
  optimization,
  bandwidth,
  arity,
  undefined_comparison,
  refinement,
  parse,
  config,
  io,
};

std::string_view to_string(ErrorKind kind);

/// Single exception type for the library; the kind distinguishes the failure class.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what);
  [[nodiscard]] ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

[[noreturn]] void fail(ErrorKind kind, const std::string& what);

inline void require(bool cond, ErrorKind kind, const std::string& what) {
  if (!cond) fail(kind, what);
}

/// Deterministic RNG stream derived from (seed, stream id). Independent streams per chain/atom.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

/// Standard normal variates. Box-Muller on top of the 64-bit engine so output does not
/// depend on the standard library's normal_distribution implementation.
class NormalSource {
 public:
  explicit NormalSource(std::mt19937_64 engine) : engine_(std::move(engine)) {}
  double operator()();
  void fill(Eigen::Ref<Vec> out);
  double uniform();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a 64-bit digest, used for config hashes and oracle cache keys.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 1469598103934665603ULL);
std::string hex64(std::uint64_t v);

/// Worker count from TSQLAB_THREADS (default 1).
int worker_count();

/// Runs body(i) for i in [0, n) over at most worker_count() threads. Work items must be
/// independent; results are written by index so the outcome is schedule-independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

/// Fixed-format number rendering for CSV output (byte-stable across runs).
std::string fmt_num(double v);

}  // namespace tsq
