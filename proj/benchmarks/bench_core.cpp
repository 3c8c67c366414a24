#include <benchmark/benchmark.h>

#include "tsq/bridge.hpp"
#include "tsq/fock.hpp"
#include "tsq/husimi.hpp"
#include "tsq/markov.hpp"
#include "tsq/propagator.hpp"

using namespace tsq;

namespace {

DriftModel frame_model() {
  Mat m(2, 2);
  m << -0.5, 0.0, 0.0, 0.5;
  return DriftModel::affine(m, Vec::Zero(2), 0.5);
}

BridgeBoundary boundary() { return {0.0, 1.0, Vec::Constant(1, 0.3), Vec::Constant(1, -0.2)}; }

void BM_GaussianBridge(benchmark::State& state) {
  const auto times = uniform_times(0.0, 1.0, static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(gaussian_bridge_exact(frame_model(), boundary(), times));
}
BENCHMARK(BM_GaussianBridge)->Arg(32)->Arg(128);

void BM_SampleBridges(benchmark::State& state) {
  const auto times = uniform_times(0.0, 1.0, 32);
  for (auto _ : state)
    benchmark::DoNotOptimize(sample_bridges(frame_model(), boundary(), times, static_cast<int>(state.range(0)), 1));
}
BENCHMARK(BM_SampleBridges)->Arg(1000)->Arg(4000)->Unit(benchmark::kMillisecond);

void BM_Kde(benchmark::State& state) {
  const PhaseGrid grid = PhaseGrid::uniform(2, -3.0, 3.0, 0.05);
  const Mat samples = Mat::Random(2, state.range(0));
  Vec out = Vec::Zero(grid.size());
  for (auto _ : state) {
    out.setZero();
    accumulate_kde(grid, samples, Vec::Constant(2, 0.2), 1.0, out);
    benchmark::DoNotOptimize(out.data());
  }
}
BENCHMARK(BM_Kde)->Arg(1000)->Arg(10000)->Unit(benchmark::kMillisecond);

void BM_HusimiField(benchmark::State& state) {
  const PhaseGrid grid = husimi_grid(1, -6.0, 6.0, 0.05);
  const FockState rho = FockState::even_cat(Complex(1.2, 0.0), static_cast<int>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(husimi_from_fock(rho, grid));
}
BENCHMARK(BM_HusimiField)->Arg(30)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_FockEvolve(benchmark::State& state) {
  const FockState rho = FockState::even_cat(Complex(1.2, 0.0), static_cast<int>(state.range(0)));
  const auto h = presets::paramp(0.5);
  for (auto _ : state) benchmark::DoNotOptimize(fock_evolve(rho, h, 0.5));
}
BENCHMARK(BM_FockEvolve)->Arg(30)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_ExactScreening(benchmark::State& state) {
  const auto times = uniform_times(0.0, 1.0, 16);
  GaussianBoundaryLaw law{Vec::Zero(2), (Mat(2, 2) << 0.6, 0.3, 0.3, 0.6).finished()};
  const auto vars = screening_vars(1, 0, 8, 16);
  for (auto _ : state) benchmark::DoNotOptimize(markov_screening_test(gaussian_joint(frame_model(), law, times, vars)));
}
BENCHMARK(BM_ExactScreening);

}  // namespace

BENCHMARK_MAIN();
