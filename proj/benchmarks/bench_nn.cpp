#include <benchmark/benchmark.h>

#include <numeric>

#include "ecloss/nn.hpp"
#include "ecloss/rng.hpp"
#include "ecloss/templates.hpp"

using namespace ecloss;

namespace {

Tensor make_images(std::size_t n, std::size_t hw) {
  Rng rng(derive_seed(12, "bench-nn"));
  Tensor images({n, 1, hw, hw});
  for (double& v : images.values()) v = rng.uniform();
  return images;
}

std::vector<std::size_t> make_labels(std::size_t n, std::size_t classes) {
  std::vector<std::size_t> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i % classes;
  return labels;
}

// one training step's forward pass: batch 64 on the default architecture
void BM_forward(benchmark::State& state) {
  const std::size_t batch = std::size_t(state.range(0));
  const auto net = reference_network(56, 10, 16);
  const auto params = init_parameters(net, 1);
  const auto images = make_images(batch, 56);
  for (auto _ : state) benchmark::DoNotOptimize(forward(net, params, images));
  state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_forward)->Arg(1)->Arg(64);

void BM_backward(benchmark::State& state) {
  const auto net = reference_network(56, 10, 16);
  const auto params = init_parameters(net, 1);
  const auto images = make_images(64, 56);
  const auto labels = make_labels(64, 10);
  TemplateParams tparams;  // 14x14
  const auto set = subsample_even(build_full_set(tparams), 400, derive_seed(0, "templates"));
  LossConfig config;
  config.beta = state.range(0) ? 1e-5 : 0.0;
  for (auto _ : state)
    benchmark::DoNotOptimize(backward(net, params, images, labels, set, config));
  state.SetItemsProcessed(state.iterations() * 64);
}
BENCHMARK(BM_backward)->Arg(0)->Arg(1);  // beta off / on

void BM_count_correct(benchmark::State& state) {
  const auto net = reference_network(56, 10, 16);
  const auto params = init_parameters(net, 1);
  LabeledDataset data{make_images(200, 56), make_labels(200, 10)};
  for (auto _ : state) benchmark::DoNotOptimize(count_correct(net, params, data));
  state.SetItemsProcessed(state.iterations() * data.size());
}
BENCHMARK(BM_count_correct);

}  // namespace

BENCHMARK_MAIN();
