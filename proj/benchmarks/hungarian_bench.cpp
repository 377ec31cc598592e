#include <benchmark/benchmark.h>

#include "setdet/matcher.hpp"
#include "setdet/rng.hpp"

namespace {

using namespace setdet;

void BM_HungarianAssign(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  const auto cols = static_cast<std::size_t>(state.range(1));
  Rng rng(1);
  CostMatrix c(rows, cols);
  for (auto& v : c.costs) v = uniform(rng, -5.0, 5.0);
  for (auto _ : state) benchmark::DoNotOptimize(hungarian_assign(c));
}
BENCHMARK(BM_HungarianAssign)->Args({3, 8})->Args({7, 9})->Args({10, 100})->Args({50, 100})->Args({100, 100});

}  // namespace
