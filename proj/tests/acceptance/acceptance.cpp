// Acceptance run: one PASS/FAIL line per criterion.
//
// usage: tsq_acceptance <config-dir> <work-dir>
// Criteria 1-3 and the oracle half of 5 call the library directly; the rest run the example
// configs through the same harness as the command-line tool and read back the manifests.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>

#include "json.hpp"
#include "test_support.hpp"
#include "tsq/bridge.hpp"
#include "tsq/fock.hpp"
#include "tsq/harness.hpp"
#include "tsq/husimi.hpp"
#include "tsq/oracle.hpp"
#include "tsq/propagator.hpp"

using namespace tsq;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

fs::path config_dir, work_dir;

struct Run {
  int code = -1;
  fs::path out;
  json manifest;
  double seconds = 0.0;
};

Run run_config(const std::string& command, const std::string& name, const std::string& tag = "") {
  Run r;
  r.out = work_dir / (name + tag);
  fs::remove_all(r.out);
  harness::RunRequest req{command, (config_dir / (name + ".json")).string(), std::nullopt, r.out.string()};
  std::ostringstream log, err;
  const auto start = std::chrono::steady_clock::now();
  r.code = harness::run(req, log, err);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::ifstream in(r.out / "manifest.json");
  if (in) in >> r.manifest;
  if (!err.str().empty()) std::fprintf(stderr, "%s: %s", name.c_str(), err.str().c_str());
  return r;
}

bool checks_pass(const json& m) {
  if (!m.contains("checks") || m["checks"].empty()) return false;
  for (const auto& c : m["checks"])
    if (!c["pass"].get<bool>()) return false;
  return true;
}

std::string read(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// ---- 1: FPE residual against unitary evolution

Outcome fpe_residual() {
  const PhaseGrid grid = husimi_grid(1, -6.0, 6.0, 0.05);
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};  // kappa t in [0, 0.5] at kappa = 0.5
  ResidualOptions opts;
  opts.delta = 1e-3;
  struct Case {
    const char* name;
    ComplexPolynomial h;
    std::function<FockState(int)> state;
  };
  const Case cases[] = {
      {"harmonic", presets::harmonic(1.0), [](int n) { return FockState::coherent(CVec::Constant(1, Complex(1.0, 0.5)), n); }},
      {"paramp", presets::paramp(0.5), [](int n) { return FockState::even_cat(Complex(1.2, 0.0), n); }},
  };
  Outcome o{true, ""};
  for (const auto& c : cases) {
    std::vector<double> probe;
    for (double t : times) {
      probe.push_back(t - opts.delta);
      probe.push_back(t + opts.delta);
    }
    const int n_max = choose_cutoff(c.state, c.h, probe, 20, 60, 1e-8);
    const ResidualReport rep = fpe_residual_check(c.h, c.state(n_max), times, grid, opts);
    double worst = 0.0;
    for (const auto& row : rep.rows) worst = std::max(worst, row.max_residual);
    o.pass = o.pass && rep.all_pass() && rep.rows.size() == times.size() && n_max <= 60 && worst <= 1e-3;
    o.detail += std::string(o.detail.empty() ? "" : ", ") + c.name + " max " + g(worst) + " (n_max " + std::to_string(n_max) + ")";
  }
  return o;
}

// ---- 2: the Moyal-type series stops at second order for quadratic symbols

QField gaussian_q(const PhaseGrid& grid, Complex beta) {
  QField q{grid, Vec(grid.size()), 0.0, Measure::alpha_area};
  for (std::size_t i = 0; i < grid.size(); ++i)
    q.values[static_cast<Eigen::Index>(i)] = std::exp(-std::norm(phi_to_alpha(grid.point(i))[0] - beta)) / M_PI;
  return q;
}

Outcome series_truncation() {
  std::mt19937_64 rng(2024);
  const PhaseGrid grid = husimi_grid(1, -5.0, 5.0, 0.1);
  const QField q = gaussian_q(grid, Complex(0.4, -0.2));
  double worst = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto h = testing::random_quadratic_symbol(1, rng);
    const Vec f = fpe_rhs(q, h);
    worst = std::max(worst, (series_rhs(q, h, 2) - f).cwiseAbs().maxCoeff() / f.cwiseAbs().maxCoeff());
  }
  const QField vac = gaussian_q(husimi_grid(1, -5.0, 5.0, 0.05), 0.0);
  const auto quartic = presets::quartic(0.1);
  const double extra = max_abs_interior(vac.grid, series_rhs(vac, quartic, 4) - series_rhs(vac, quartic, 2), 3);
  return {worst <= 1e-10 && extra > 1e-3, "quadratic max rel diff " + g(worst) + ", quartic higher terms " + g(extra)};
}

// ---- 3: traceless diffusion

// random real symbol with monomials up to total degree 4 (one or two modes)
ComplexPolynomial random_symbol(int modes, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> deg(0, 2);
  ComplexPolynomial h = testing::random_quadratic_symbol(modes, rng);
  for (int k = 0; k < 4; ++k) {
    std::vector<int> p(modes), q(modes);
    for (int m = 0; m < modes; ++m) {
      p[m] = deg(rng);
      q[m] = deg(rng);
    }
    const Complex c(u(rng), u(rng));
    if (p == q) {
      h.add_term({p, q}, c.real());
    } else {
      h.add_term({p, q}, c);
      h.add_term({q, p}, std::conj(c));
    }
  }
  return h;
}

Outcome traceless() {
  std::mt19937_64 rng(99);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const int modes = 1 + i % 2;
    const auto h = i < 50 ? testing::random_quadratic_symbol(modes, rng) : random_symbol(modes, rng);
    for (int k = 0; k < 3; ++k) {
      const Vec phi = Vec::NullaryExpr(2 * modes, [&]() { return 2.0 * std::normal_distribution<double>()(rng); });
      const Mat d = diffusion_matrix(h, phi);
      worst = std::max(worst, std::abs(d.trace()) / std::max(1.0, d.norm()));
    }
  }
  return {worst <= 1e-12, "100 symbols (50 quadratic, 50 up to degree 4), max |tr D| " + g(worst)};
}

// ---- 4: bridge ensembles against exact Gaussian bridges

Outcome bridges() {
  bool ok = true;
  double seconds = 0.0, min_ess = 1e300;
  for (const char* name : {"bridge_paramp", "bridge_coupled", "bridge_rotor", "bridge_affine", "bridge_zero"}) {
    const Run r = run_config("bridge", name);
    ok = ok && r.code == 0 && checks_pass(r.manifest) && r.manifest["checks"].size() == 3;
    seconds += r.seconds;
    // diagnostics.csv: n_paths,acceptance,rho,min_ess,...
    std::istringstream diag(read(r.out / "diagnostics.csv"));
    std::string line, field;
    std::getline(diag, line);
    std::getline(diag, line);
    std::stringstream row(line);
    for (int i = 0; i < 4; ++i) std::getline(row, field, ',');
    min_ess = std::min(min_ess, std::atof(field.c_str()));
  }
  ok = ok && seconds <= 300.0 && min_ess >= 1000.0;
  return {ok, "5 affine systems, midpoint 3 SE / 5% covariance, min ESS " + g(min_ess) + ", " + g(seconds) + " s"};
}

// ---- 5: boundary mixtures satisfy the FPE

DriftModel frame_model() {
  Mat m(2, 2);
  m << -0.5, 0.0, 0.0, 0.5;
  return DriftModel::affine(m, Vec::Zero(2), 0.5);
}

// exact mixture built from the oracle's quadratic form: psi_k ~ N(P^-1 b, P^-1) restricted
Outcome mixtures() {
  const int steps = 128;
  const auto times = uniform_times(0.0, 1.0, steps);
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.05);
  const DriftModel model = frame_model();
  const std::vector<int> ks{63, 64, 65};
  MixtureSeries s;
  for (int k : ks) {
    s.times.push_back(times[k]);
    s.slices.push_back(QField{grid, Vec::Zero(grid.size()), times[k], Measure::phase_space});
  }
  for (double x0 : {-0.5, 0.0, 0.5})
    for (double yf : {-0.4, 0.05, 0.5}) {
      const auto q = oracle::oracle_gaussian_quadratic_form(model.linear_part(), model.offset(), model.d(), times,
                                                            Vec::Constant(1, x0), Vec::Constant(1, yf));
      const Eigen::LDLT<Mat> ldlt(q.precision);
      const Vec mean = ldlt.solve(q.linear);
      const Mat cov = ldlt.solve(Mat::Identity(q.precision.rows(), q.precision.cols()));
      for (std::size_t i = 0; i < ks.size(); ++i) {
        const Eigen::Index at = 1 + 2 * (ks[i] - 1);  // after y_0
        s.slices[i].values += gaussian_on_grid(grid, mean.segment(at, 2), cov.block(at, at, 2, 2)) / 9.0;
      }
    }
  MixtureResidualOptions tight;
  tight.threshold = 1e-3;
  const auto exact = mixture_fpe_residual(s, model, tight);
  const Run kde = run_config("bridge", "mixture_kde");
  double kde_res = std::numeric_limits<double>::quiet_NaN();
  {
    std::ifstream in(kde.out / "mixture_residual.csv");
    std::string line;
    std::getline(in, line);
    if (std::getline(in, line)) kde_res = std::atof(line.substr(line.find(',') + 1).c_str());
  }
  const bool ok = exact.all_pass() && exact.rows[0].residual <= 1e-3 && kde.code == 0 && checks_pass(kde.manifest) &&
                  kde_res <= 0.1;
  return {ok, "oracle mixture residual " + g(exact.rows[0].residual) + ", KDE (9 atoms x 1e4 paths) " + g(kde_res)};
}

// ---- 6: screening and P_IN/Z factorization

Outcome screening() {
  const Run c = run_config("markov", "markov_coupled");
  const Run d = run_config("markov", "markov_decoupled");
  const bool ok = c.code == 0 && d.code == 0 && checks_pass(c.manifest) && checks_pass(d.manifest);
  return {ok, "coupled: " + c.manifest.value("verdict", std::string("?")) + "; decoupled: " +
                  d.manifest.value("verdict", std::string("?")) + "; iff agrees on both sets"};
}

// ---- 7: Bernstein and interior shielding

Outcome bernstein() {
  const Run r = run_config("bernstein", "bernstein");
  const Run p = run_config("bernstein", "bernstein_paramp");
  double worst = 0.0;
  bool controls = true;
  for (const Run* run : {&r, &p}) {
    std::ifstream in(run->out / "verdicts.csv");
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::vector<std::string> f;
      std::stringstream s(line);
      for (std::string c; std::getline(s, c, ',');) f.push_back(c);
      if (f.size() < 6 || f[5] != "gaussian-exact") continue;
      if (f[1].find("partial") != std::string::npos) controls = controls && f[4] == "dependent";
      else worst = std::max(worst, std::atof(f[2].c_str()));
    }
  }
  const bool ok = r.code == 0 && p.code == 0 && checks_pass(r.manifest) && checks_pass(p.manifest) && worst < 1e-10 && controls;
  return {ok, "exact max statistic " + g(worst) + ", partial controls " + (controls ? "dependent" : "NOT dependent")};
}

// ---- 8: preparation leaks into time-oriented conditionals only

std::map<std::string, double> lambda_values(const Run& r) {
  std::map<std::string, double> v;
  std::ifstream in(r.out / "lambda.csv");
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto at = line.find(',');
    v[line.substr(0, at)] = std::atof(line.substr(at + 1).c_str());
  }
  return v;
}

Outcome lambda() {
  const Run e = run_config("lambda", "lambda_exact");
  const Run s = run_config("lambda", "lambda_sampled");
  auto ev = lambda_values(e), sv = lambda_values(s);
  const bool ok = e.code == 0 && s.code == 0 && checks_pass(e.manifest) && checks_pass(s.manifest) &&
                  sv["oriented_tv"] > 10 * sv["noise"] && sv["kernel_tv"] < sv["noise"];
  return {ok, "sampled oriented TV " + g(sv["oriented_tv"]) + ", kernel TV " + g(sv["kernel_tv"]) + ", noise " +
                  g(sv["noise"]) + "; exact oriented " + g(ev["oriented_tv"]) + ", kernel " + g(ev["kernel_tv"])};
}

// ---- 9: representability of manufactured mixtures, reproducible cat-state outputs

Outcome represent() {
  const Run m = run_config("represent", "represent_manufactured");
  const Run a = run_config("represent", "represent_cat");
  const Run b = run_config("represent", "represent_cat", "_again");
  bool same = a.code == 0 && b.code == 0;
  for (const char* f : {"summary.csv", "weights.csv", "residuals.csv"}) same = same && read(a.out / f) == read(b.out / f);
  std::string tv = "?";
  for (const auto& c : m.manifest.value("checks", json::array())) {
    const auto name = c["name"].get<std::string>();
    if (name.rfind("weight TV", 0) == 0) tv = name.substr(name.find("got ") + 4, name.size() - name.find("got ") - 5);
  }
  const bool ok = m.code == 0 && checks_pass(m.manifest) && same;
  return {ok, "manufactured residual at floor (fit and 2 held-out times), weight TV " + tv + "; cat-state CSVs " +
                  (same ? "byte-identical" : "DIFFER") + " (verdict " + a.manifest.value("verdict", std::string("?")) + ")"};
}

// ---- 10: reruns from the resolved config reproduce every artifact

Outcome reruns() {
  const std::vector<std::pair<std::string, std::string>> runs{
      {"residual", "residual_paramp"}, {"bridge", "bridge_affine"}, {"bridge", "mixture_kde"},
      {"markov", "markov_coupled"},    {"lambda", "lambda_sampled"}, {"represent", "represent_manufactured"}};
  int same = 0, total = 0;
  for (const auto& [command, name] : runs) {
    const fs::path first = work_dir / name;
    if (!fs::exists(first / "manifest.json")) (void)run_config(command, name);
    json m1;
    std::ifstream(first / "manifest.json") >> m1;
    // rerun the echoed config with a different worker count
    const fs::path again = work_dir / (name + "_rerun");
    fs::remove_all(again);
    ::setenv("TSQLAB_THREADS", "2", 1);
    std::ostringstream log, err;
    const int code = harness::run({command, (first / "resolved_config.json").string(), std::nullopt, again.string()}, log, err);
    ::unsetenv("TSQLAB_THREADS");
    json m2;
    std::ifstream(again / "manifest.json") >> m2;
    ++total;
    if (code == m1["exit_code"].get<int>() && m1["artifacts"] == m2["artifacts"] && m1["config_hash"] == m2["config_hash"] &&
        read(first / "resolved_config.json") == read(again / "resolved_config.json"))
      ++same;
  }
  return {same == total, std::to_string(same) + "/" + std::to_string(total) +
                             " manifests reproduced (artifact hashes, config hash) from resolved configs with 2 workers"};
}

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::fprintf(stderr, "usage: %s <config-dir> <work-dir>\n", argv[0]);
    return 1;
  }
  config_dir = argv[1];
  work_dir = argv[2];
  fs::create_directories(work_dir);
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"FPE residual, harmonic and paramp", fpe_residual},
      {"series truncation for quadratic symbols", series_truncation},
      {"traceless diffusion", traceless},
      {"bridge ensembles vs exact Gaussian bridges", bridges},
      {"boundary mixtures satisfy the FPE", mixtures},
      {"screening and P_IN/Z factorization", screening},
      {"Bernstein and interior shielding", bernstein},
      {"lambda mediation", lambda},
      {"representability of manufactured mixtures", represent},
      {"deterministic reruns", reruns},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %s: %s: %s\n", i + 1, o.pass ? "PASS" : "FAIL", criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
