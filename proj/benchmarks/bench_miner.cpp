// Blocked miner against the per-pair loop it replaces.

#include <benchmark/benchmark.h>

#include <random>

#include "erragree/embedding.hpp"
#include "erragree/pair_miner.hpp"

namespace {

erragree::EmbeddingMatrix random_rows(std::uint64_t seed, std::size_t rows, std::size_t dims) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  std::vector<float> data;
  data.reserve(rows * dims);
  std::vector<float> v(dims);
  for (std::size_t r = 0; r < rows; ++r) {
    for (auto& x : v) x = g(rng);
    const auto u = erragree::normalize_vector(v);
    data.insert(data.end(), u.begin(), u.end());
  }
  return erragree::EmbeddingMatrix("bench", rows, dims, std::move(data), true);
}

void BM_Blocked(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto gen = random_rows(1, n, 512), ref = random_rows(2, n, 512);
  erragree::MinerConfig cfg;
  cfg.block_size = static_cast<std::size_t>(state.range(1));
  for (auto _ : state) benchmark::DoNotOptimize(erragree::mine_pairs(gen, ref, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * (n - 1) / 2));
}
BENCHMARK(BM_Blocked)->Args({2000, 256})->Args({5000, 128})->Args({5000, 256})->Args({5000, 512})
    ->Unit(benchmark::kMillisecond);

void BM_Naive(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const auto gen = random_rows(1, n, 512), ref = random_rows(2, n, 512);
  const erragree::MinerConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(erragree::brute_force_mine(gen, ref, cfg));
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(n * (n - 1) / 2));
}
BENCHMARK(BM_Naive)->Arg(2000)->Arg(5000)->Unit(benchmark::kMillisecond)->Iterations(1);

void BM_Cosine(benchmark::State& state) {
  const auto m = random_rows(3, 2, static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(erragree::cosine_sim(m.row(0), m.row(1)));
}
BENCHMARK(BM_Cosine)->Arg(64)->Arg(512);

}  // namespace

BENCHMARK_MAIN();
