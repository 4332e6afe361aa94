#include <benchmark/benchmark.h>

#include <vector>

#include "tarec/nets.hpp"

using namespace tarec;

namespace {

Model bench_model() {
  ModelConfig c;
  c.num_items = 1000;
  return Model::init(c, 1);
}

void BM_DenoiserForward(benchmark::State& state) {
  Model m = bench_model();
  Rng rng(2);
  const auto rows = static_cast<std::size_t>(state.range(0));
  const Matrix x = gaussian(rows, 64, rng);
  const Matrix g = gaussian(rows, 64, rng);
  for (auto _ : state) benchmark::DoNotOptimize(m.denoiser(x, g, 500.0));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(64)->Arg(256);

void BM_EncoderForward(benchmark::State& state) {
  Model m = bench_model();
  std::vector<std::vector<ItemIndex>> histories(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < histories.size(); ++i) {
    for (int k = 0; k < 10; ++k) histories[i].push_back(static_cast<ItemIndex>((i * 7 + k * 13) % 1000));
  }
  for (auto _ : state) benchmark::DoNotOptimize(m.encoder.encode(histories));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_EncoderForward)->Arg(1)->Arg(64);

}  // namespace
