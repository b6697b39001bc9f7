// Serial reference vs OpenMP version of each kernel. The second argument of
// the parallel benchmarks is the thread count.
#include <benchmark/benchmark.h>

#include "tagforge/crossmodal.hpp"
#include "tagforge/kernels.hpp"

using namespace tagforge;

namespace {

GmmModel make_gmm(std::size_t k, std::size_t d) {
  Rng rng(1);
  GmmModel g{std::vector<double>(k, 1.0 / static_cast<double>(k)), Matrix(k, d), Matrix(k, d)};
  for (auto& v : g.means.data()) v = rng.normal();
  for (auto& v : g.variances.data()) v = 0.5 + rng.uniform();
  return g;
}

Matrix make_data(std::size_t n, std::size_t d) {
  Rng rng(2);
  Matrix m(n, d);
  for (auto& v : m.data()) v = rng.normal();
  return m;
}

struct MlpFixture {
  EmbeddingNet net;
  std::vector<TrainPair> batch;
};

MlpFixture make_mlp(std::size_t f, std::size_t h, std::size_t d, std::size_t b) {
  Rng rng(3);
  MlpFixture m{EmbeddingNet::zeros(f, h, d), std::vector<TrainPair>(b)};
  for (auto& v : m.net.w1.data()) v = 0.01 * rng.normal();
  for (auto& v : m.net.w2.data()) v = 0.01 * rng.normal();
  for (auto& p : m.batch) {
    p.fisher.resize(f);
    p.target.resize(d);
    for (auto& v : p.fisher) v = rng.normal();
    for (auto& v : p.target) v = rng.normal();
  }
  return m;
}

void BM_EStepReference(benchmark::State& state) {
  const auto g = make_gmm(64, 32);
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::estep_stats(g, data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_EStepParallel(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(1)));
  const auto g = make_gmm(64, 32);
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::estep_stats(g, data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  set_threads(1);
}

void BM_FisherReference(benchmark::State& state) {
  const auto g = make_gmm(64, 32);
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::fisher_sums(g, data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_FisherParallel(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(1)));
  const auto g = make_gmm(64, 32);
  const auto data = make_data(static_cast<std::size_t>(state.range(0)), 32);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::fisher_sums(g, data));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  set_threads(1);
}

void BM_ScanReference(benchmark::State& state) {
  const auto rows = make_data(static_cast<std::size_t>(state.range(0)), 100);
  const std::vector<double> q(100, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::squared_distances(rows, q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_ScanParallel(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(1)));
  const auto rows = make_data(static_cast<std::size_t>(state.range(0)), 100);
  const std::vector<double> q(100, 0.1);
  for (auto _ : state) benchmark::DoNotOptimize(kernels::squared_distances(rows, q));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  set_threads(1);
}

void BM_MlpReference(benchmark::State& state) {
  const auto m = make_mlp(1024, 64, 25, static_cast<std::size_t>(state.range(0)));
  EmbeddingNet grad;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::reference::mlp_loss_grad(m.net, m.batch, 1e-4, grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void BM_MlpParallel(benchmark::State& state) {
  set_threads(static_cast<int>(state.range(1)));
  const auto m = make_mlp(1024, 64, 25, static_cast<std::size_t>(state.range(0)));
  EmbeddingNet grad;
  for (auto _ : state) benchmark::DoNotOptimize(kernels::mlp_loss_grad(m.net, m.batch, 1e-4, grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
  set_threads(1);
}

}  // namespace

BENCHMARK(BM_EStepReference)->Arg(20000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_EStepParallel)->Args({20000, 1})->Args({20000, 2})->Args({20000, 4})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FisherReference)->Arg(4000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_FisherParallel)->Args({4000, 1})->Args({4000, 2})->Args({4000, 4})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ScanReference)->Arg(100000)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_ScanParallel)->Args({100000, 1})->Args({100000, 2})->Args({100000, 4})->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MlpReference)->Arg(256)->Unit(benchmark::kMillisecond)->UseRealTime();
BENCHMARK(BM_MlpParallel)->Args({256, 1})->Args({256, 2})->Args({256, 4})->Unit(benchmark::kMillisecond)->UseRealTime();

BENCHMARK_MAIN();
