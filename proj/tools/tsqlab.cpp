// tsqlab <command> --config FILE [--seed N] [--out DIR]
//
// Exit codes: 0 pass or neutral, 1 usage or config problem, 2 a check failed.

#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "tsq/harness.hpp"

int main(int argc, char** argv) {
  namespace h = tsq::harness;
  CLI::App app{"tsqlab: time-symmetric Q-function experiments"};
  app.require_subcommand(1, 1);
  app.set_version_flag("--version", "tsqlab 0.3.0");

  h::RunRequest req;
  std::uint64_t seed = 0;
  const std::map<std::string, std::string> about{
      {"residual", "Q-function FPE residual from Fock evolution"},
      {"bridge", "bridge path ensemble at a fixed boundary"},
      {"markov", "screening and P_IN/Z factorization"},
      {"bernstein", "Bernstein and interior-shielding checks"},
      {"lambda", "preparation leakage into time-oriented conditionals"},
      {"represent", "fit a target density with a boundary dictionary"},
      {"report", "summarize run manifests by ensemble level"},
  };
  for (const auto& name : h::commands()) {
    auto* sub = app.add_subcommand(name, about.at(name));
    sub->add_option("--config", req.config_path, "JSON config")->required();
    sub->add_option("--seed", seed, "overrides the config seed");
    sub->add_option("--out", req.out_dir, "output directory (default out/<command>)");
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : h::kExitUsage;
  }
  auto* sub = app.get_subcommands().front();
  req.command = sub->get_name();
  if (sub->count("--seed") > 0) req.seed = seed;
  return h::run(req, std::cout, std::cerr);
}
