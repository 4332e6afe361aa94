#include <benchmark/benchmark.h>

#include "tarec/generate.hpp"

using namespace tarec;

namespace {

ModelConfig bench_config() {
  ModelConfig c;
  c.num_items = 1000;
  return c;
}

void BM_OneStep(benchmark::State& state) {
  Model m = Model::init(bench_config(), 1);
  const auto sched = NoiseSchedule::linear(1000);
  Rng rng(2);
  const Matrix g = gaussian(static_cast<std::size_t>(state.range(0)), 64, rng);
  const DenoiseFn f = bind_denoiser(m, g);
  for (auto _ : state) benchmark::DoNotOptimize(generate_one_step(f, sched, g.rows(), 64, rng));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_OneStep)->Arg(1)->Arg(64);

void BM_MultiStep(benchmark::State& state) {
  Model m = Model::init(bench_config(), 1);
  const auto sched = NoiseSchedule::linear(1000);
  Rng rng(2);
  const Matrix g = gaussian(64, 64, rng);
  const DenoiseFn f = bind_denoiser(m, g);
  const int steps = static_cast<int>(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(generate_multi_step(f, sched, steps, g.rows(), 64, rng));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_MultiStep)->Arg(10)->Arg(100)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Rank(benchmark::State& state) {
  Rng rng(3);
  const auto V = static_cast<std::size_t>(state.range(0));
  const Matrix e = gaussian(V + 1, 64, rng);
  const Matrix x = gaussian(1, 64, rng);
  for (auto _ : state) benchmark::DoNotOptimize(rank(x.row_span(0), e, V, 20));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Rank)->Arg(1000)->Arg(10000);

}  // namespace
