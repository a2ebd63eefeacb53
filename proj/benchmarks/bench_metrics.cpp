#include <benchmark/benchmark.h>

#include <cmath>

#include "ecloss/loss.hpp"
#include "ecloss/metrics.hpp"
#include "ecloss/rng.hpp"
#include "ecloss/viz.hpp"

using namespace ecloss;

namespace {

Tensor smooth_map(std::size_t hw, std::uint64_t seed) {
  Rng rng(seed);
  Tensor m({hw, hw});
  for (int b = 0; b < 3; ++b) {
    const double cy = rng.uniform(0.0, double(hw - 1));
    const double cx = rng.uniform(0.0, double(hw - 1));
    const double sigma = rng.uniform(1.0, double(hw) / 5.0);
    for (std::size_t r = 0; r < hw; ++r)
      for (std::size_t c = 0; c < hw; ++c) {
        const double d2 = (r - cy) * (r - cy) + (c - cx) * (c - cx);
        m.at2(r, c) += std::exp(-d2 / (2.0 * sigma * sigma));
      }
  }
  return m;
}

void BM_top10_threshold(benchmark::State& state) {
  const auto m = smooth_map(std::size_t(state.range(0)), 21);
  for (auto _ : state) benchmark::DoNotOptimize(top10_threshold(m));
  state.SetItemsProcessed(state.iterations() * m.values().size());
}
BENCHMARK(BM_top10_threshold)->Arg(14)->Arg(56);

void BM_upsample_bilinear(benchmark::State& state) {
  const auto m = smooth_map(14, 22);
  for (auto _ : state) benchmark::DoNotOptimize(upsample_bilinear(m, 56, 56));
  state.SetItemsProcessed(state.iterations() * 56 * 56);
}
BENCHMARK(BM_upsample_bilinear);

void BM_count_peaks(benchmark::State& state) {
  const auto m = smooth_map(std::size_t(state.range(0)), 23);
  const double pm = default_prominence(m);
  for (auto _ : state) benchmark::DoNotOptimize(count_peaks(m, pm));
  state.SetItemsProcessed(state.iterations() * m.values().size());
}
BENCHMARK(BM_count_peaks)->Arg(14)->Arg(56);

// eval-shaped workload: the full report over a small batch of images
void BM_evaluate_metrics(benchmark::State& state) {
  const std::size_t images = std::size_t(state.range(0));
  Rng rng(derive_seed(13, "bench-metrics"));
  FeatureBatch f;
  f.batch = images;
  f.channels = 16;
  f.height = f.width = 14;
  f.values.resize(f.rows() * f.map_size());
  for (double& v : f.values) v = std::max(0.0, rng.normal(0.2, 0.6));

  std::vector<PartMasks> masks(images);
  for (auto& per_image : masks) {
    per_image.assign(4, std::vector<std::uint8_t>(56 * 56, 0));
    for (std::size_t p = 0; p < 4; ++p)
      for (std::size_t i = 0; i < 56 * 56; ++i)
        per_image[p][i] = (i / 56 / 14 == p) && (i % 7 == 0);
  }
  for (auto _ : state)
    benchmark::DoNotOptimize(evaluate_metrics(f, masks, 56, 56, {}));
  state.SetItemsProcessed(state.iterations() * f.rows());
}
BENCHMARK(BM_evaluate_metrics)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
