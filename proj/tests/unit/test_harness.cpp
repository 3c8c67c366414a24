#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "tsq/common.hpp"
#include "tsq/harness.hpp"

using namespace tsq;
using namespace tsq::harness;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tsq_harness_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

fs::path write(const fs::path& dir, const std::string& name, const std::string& text) {
  std::ofstream(dir / name) << text;
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kBridge = R"({
  "schema_version": 1, "seed": 3,
  "model": {"kind": "zero", "d": 0.5},
  "bridge": {"steps": 8, "n_paths": 200, "min_ess": 50, "covariance_tolerance": 0.5, "mean_tolerance_se": 5}
})";

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::config;
}

}  // namespace

TEST_CASE("resolved configs carry every default and are fixed points") {
  const std::string once = resolve_config("bridge", kBridge, std::nullopt);
  const json j = json::parse(once);
  CHECK(j["bridge"]["t0"] == 0.0);
  CHECK(j["bridge"]["sampler"]["chains"] == 4);
  CHECK(j["model"]["cubic"] == 0.0);
  CHECK(j["command"] == "bridge");
  CHECK(resolve_config("bridge", once, std::nullopt) == once);
  // the seed flag overrides the file
  CHECK(json::parse(resolve_config("bridge", kBridge, 99))["seed"] == 99);
}

TEST_CASE("config errors name the offending key") {
  auto msg = [](const std::string& command, const std::string& text) {
    try {
      (void)resolve_config(command, text, std::nullopt);
    } catch (const Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(msg("bridge", R"({"schema_version": 1, "seed": 1, "model": {"kind": "zero", "d": 0.5}, "bridge": {"stpes": 8}})")
            .find("bridge.stpes") != std::string::npos);
  CHECK(msg("bridge", R"({"schema_version": 2, "seed": 1})").find("schema_version") != std::string::npos);
  CHECK(msg("bridge", R"({"schema_version": 1, "model": {"kind": "zero", "d": 0.5}})").find("seed") != std::string::npos);
  CHECK(msg("bridge", R"({"schema_version": 1, "seed": -4})").find("seed") != std::string::npos);
  CHECK(msg("bridge", R"({"schema_version": 1, "seed": 1, "model": {"kind": "zero", "d": "big"}})").find("model.d") !=
        std::string::npos);
  CHECK(msg("bridge", R"({"schema_version": 1, "seed": 1, "model": {"kind": "zero", "d": 0.0}})").find("d must be > 0") !=
        std::string::npos);
  CHECK(msg("residual", R"({"schema_version": 1, "seed": 1, "hamiltonian": {"preset": "dragon"}})").find("dragon") !=
        std::string::npos);
  CHECK(msg("markov", R"({"schema_version": 1, "seed": 1, "command": "bridge"})").find("not 'markov'") != std::string::npos);
  CHECK(msg("represent", R"({"schema_version": 1, "seed": 1, "hamiltonian": {"preset": "harmonic"},
      "represent": {"target": {"kind": "husimi"}}})").find("bandwidth") != std::string::npos);
  CHECK(kind_of([] { (void)resolve_config("bridge", "{not json", std::nullopt); }) == ErrorKind::parse);
}

TEST_CASE("sampled families must be able to reach the corrected level") {
  const char* text = R"({"schema_version": 1, "seed": 1, "markov": {"backend": "sampled",
      "random": {"count": 20}, "ci": {"permutations": 199}}})";
  CHECK(kind_of([&] { (void)resolve_config("markov", text, std::nullopt); }) == ErrorKind::config);
  const char* exact = R"({"schema_version": 1, "seed": 1, "markov": {"backend": "exact",
      "random": {"count": 20}, "ci": {"permutations": 199}}})";
  CHECK_NOTHROW((void)resolve_config("markov", exact, std::nullopt));
}

TEST_CASE("a bad config leaves no outputs") {
  const fs::path dir = scratch("bad");
  const auto cfg = write(dir, "c.json", R"({"schema_version": 1, "seed": 1, "model": {"kind": "zero", "d": 0.5}, "bridge": {"n_paths": 5}})");
  std::ostringstream log, err;
  CHECK(run({"bridge", cfg.string(), std::nullopt, (dir / "out").string()}, log, err) == kExitUsage);
  CHECK(!fs::exists(dir / "out"));
  CHECK(err.str().find("bridge.n_paths") != std::string::npos);
  CHECK(run({"bridge", (dir / "missing.json").string(), std::nullopt, (dir / "out").string()}, log, err) == kExitUsage);
  CHECK(run({"nonsense", cfg.string(), std::nullopt, (dir / "out").string()}, log, err) == kExitUsage);
}

TEST_CASE("runs write a manifest and reproduce their bytes") {
  const fs::path dir = scratch("run");
  const auto cfg = write(dir, "c.json", kBridge);
  std::ostringstream log, err;
  REQUIRE(run({"bridge", cfg.string(), std::nullopt, (dir / "a").string()}, log, err) == kExitOk);
  const json m = json::parse(slurp(dir / "a" / "manifest.json"));
  CHECK(m["status"] == "pass");
  CHECK(m["seed"] == 3);
  CHECK(m["levels"] == json::array({"E1"}));
  CHECK(m["artifacts"].size() == 2);  // diagnostics and marginals
  for (const auto& a : m["artifacts"]) CHECK(hex64(fnv1a(slurp(dir / "a" / a["path"].get<std::string>()))) == a["fnv1a"]);
  REQUIRE(run({"bridge", (dir / "a" / "resolved_config.json").string(), std::nullopt, (dir / "b").string()}, log, err) ==
          kExitOk);
  for (const char* f : {"diagnostics.csv", "marginals.csv", "resolved_config.json"})
    CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
  // another seed changes the draws
  REQUIRE(run({"bridge", cfg.string(), 4, (dir / "c").string()}, log, err) == kExitOk);
  CHECK(slurp(dir / "a" / "marginals.csv") != slurp(dir / "c" / "marginals.csv"));
}

TEST_CASE("a failed check exits 2 and is recorded") {
  const fs::path dir = scratch("fail");
  // ESS demand no ensemble of this size can meet
  const auto cfg = write(dir, "c.json", R"({"schema_version": 1, "seed": 3, "model": {"kind": "zero", "d": 0.5},
      "bridge": {"steps": 8, "n_paths": 100, "min_ess": 1e6}})");
  std::ostringstream log, err;
  CHECK(run({"bridge", cfg.string(), std::nullopt, (dir / "o").string()}, log, err) == kExitCheck);
  const json m = json::parse(slurp(dir / "o" / "manifest.json"));
  CHECK(m["status"] == "fail");
  CHECK(m["exit_code"] == kExitCheck);
}

TEST_CASE("report rows follow the ensemble levels") {
  const fs::path dir = scratch("report");
  const auto cfg = write(dir, "c.json", kBridge);
  std::ostringstream log, err;
  REQUIRE(run({"bridge", cfg.string(), std::nullopt, (dir / "b").string()}, log, err) == kExitOk);
  const auto rows = summarize_manifests({(dir / "b" / "manifest.json").string()});
  REQUIRE(rows.size() == 4);
  CHECK(rows[0].status == "not-run");
  CHECK(rows[1].status == "pass");
  CHECK(rows[1].commands == std::vector<std::string>{"bridge"});
  CHECK(rows[3].status == "not-run");
  const auto rep = write(dir, "r.json", R"({"schema_version": 1, "manifests": ["b/manifest.json"]})");
  CHECK(run({"report", rep.string(), std::nullopt, (dir / "r").string()}, log, err) == kExitOk);
  CHECK(slurp(dir / "r" / "report.csv").find("E1,") != std::string::npos);
  const auto empty = write(dir, "e.json", R"({"schema_version": 1, "manifests": []})");
  CHECK(run({"report", empty.string(), std::nullopt, (dir / "e").string()}, log, err) == kExitUsage);
  const auto missing = write(dir, "m.json", R"({"schema_version": 1, "manifests": ["nowhere/manifest.json"]})");
  CHECK(run({"report", missing.string(), std::nullopt, (dir / "m").string()}, log, err) == kExitUsage);
  CHECK(!fs::exists(dir / "m"));
}
