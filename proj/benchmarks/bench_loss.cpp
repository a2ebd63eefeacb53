#include <benchmark/benchmark.h>

#include "ecloss/loss.hpp"
#include "ecloss/rng.hpp"
#include "ecloss/templates.hpp"

using namespace ecloss;

namespace {

FeatureBatch make_batch(std::size_t b, std::size_t c, std::size_t hw) {
  Rng rng(derive_seed(11, "bench-loss"));
  FeatureBatch batch;
  batch.batch = b;
  batch.channels = c;
  batch.height = batch.width = hw;
  batch.values.resize(batch.rows() * batch.map_size());
  for (double& v : batch.values) v = rng.normal(0.0, 1.0);
  return batch;
}

TemplateSet make_set(std::size_t hw, std::size_t count) {
  TemplateParams params;
  params.height = params.width = hw;
  const auto full = build_full_set(params);
  return subsample_even(full, std::min(count, full.size()), derive_seed(0, "templates"));
}

// training-shaped workload: batch 64, 16 channels, 14x14 grid
void BM_mi_value(benchmark::State& state) {
  const auto set = make_set(14, std::size_t(state.range(0)));
  const auto batch = make_batch(64, 16, 14);
  for (auto _ : state)
    benchmark::DoNotOptimize(mutual_information_value(batch, set));
  state.SetItemsProcessed(state.iterations() * batch.rows() * set.size());
}
BENCHMARK(BM_mi_value)->Arg(50)->Arg(400)->Arg(1000);

void BM_mi_full(benchmark::State& state) {
  const auto set = make_set(14, 400);
  const auto batch = make_batch(std::size_t(state.range(0)), 16, 14);
  for (auto _ : state) benchmark::DoNotOptimize(mutual_information(batch, set));
  state.SetItemsProcessed(state.iterations() * batch.rows() * set.size());
}
BENCHMARK(BM_mi_full)->Arg(8)->Arg(64);

void BM_ecloss_gradient(benchmark::State& state) {
  const auto set = make_set(14, std::size_t(state.range(0)));
  const auto batch = make_batch(64, 16, 14);
  for (auto _ : state) benchmark::DoNotOptimize(ecloss_and_gradient(batch, set));
  state.SetItemsProcessed(state.iterations() * batch.rows() * set.size());
}
BENCHMARK(BM_ecloss_gradient)->Arg(50)->Arg(400);

void BM_build_full_set(benchmark::State& state) {
  TemplateParams params;
  params.height = params.width = std::size_t(state.range(0));
  for (auto _ : state) benchmark::DoNotOptimize(build_full_set(params));
}
BENCHMARK(BM_build_full_set)->Arg(7)->Arg(14);

}  // namespace

BENCHMARK_MAIN();
