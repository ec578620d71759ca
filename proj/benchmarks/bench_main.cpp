#include <benchmark/benchmark.h>

#include "dropscan/arma.hpp"
#include "dropscan/intervention.hpp"
#include "dropscan/netsim.hpp"

using namespace dropscan;

namespace {

DiffSeries sample_series(std::size_t n) {
  const double phi[] = {0.5}, theta[] = {0.3};
  DiffSeries y = simulate_arma({1, 1}, 3.0, phi, theta, 2.0, n, 42);
  y.t1_index = n / 2;
  return y;
}

void BM_Loglikelihood(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const DiffSeries y = sample_series(n);
  ArmaParams p;
  p.c = 3.0;
  p.phi = {0.5};
  p.theta = {0.3};
  p.sigma2 = 2.0;
  const RegressorMatrix x = RegressorMatrix::empty(n);
  for (auto _ : state) benchmark::DoNotOptimize(loglikelihood(p, y, x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Loglikelihood)->Arg(200)->Arg(2000);

void BM_Gradient(benchmark::State& state) {
  const DiffSeries y = sample_series(200);
  ArmaParams p;
  p.c = 3.0;
  p.phi = {0.5};
  p.theta = {0.3};
  p.sigma2 = 2.0;
  const RegressorMatrix x = RegressorMatrix::empty(200);
  for (auto _ : state) benchmark::DoNotOptimize(loglikelihood_gradient(p, y, x));
}
BENCHMARK(BM_Gradient);

void BM_FitArma11(benchmark::State& state) {
  const DiffSeries y = sample_series(200);
  const RegressorMatrix x = RegressorMatrix::empty(200);
  for (auto _ : state) benchmark::DoNotOptimize(fit(y, x, {1, 1}));
}
BENCHMARK(BM_FitArma11)->Unit(benchmark::kMillisecond);

void BM_SelectOrder(benchmark::State& state) {
  const DiffSeries y = sample_series(100);
  for (auto _ : state) benchmark::DoNotOptimize(select_order(y));
}
BENCHMARK(BM_SelectOrder)->Unit(benchmark::kMillisecond);

void BM_RunSim(benchmark::State& state) {
  SimScenario sc;
  sc.censor.direction = CensorDirection::ClientToServer;
  sc.client.noise = NoiseModel::compound_poisson(1.0, 1.8, 500);
  for (auto _ : state) benchmark::DoNotOptimize(run_sim(sc));
}
BENCHMARK(BM_RunSim)->Unit(benchmark::kMillisecond);

void BM_Analyze(benchmark::State& state) {
  SimScenario sc;
  sc.client.noise = NoiseModel::compound_poisson(1.0, 1.8, 500);
  const SimOutcome o = run_sim(sc);
  const DiffSeries y = o.series();
  for (auto _ : state) benchmark::DoNotOptimize(analyze(y, o.schedule, TestConfig{}));
}
BENCHMARK(BM_Analyze)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
