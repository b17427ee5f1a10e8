#include <benchmark/benchmark.h>

#include <vector>

#include "kiwiqe/synthetic.hpp"
#include "kiwiqe/training.hpp"

using namespace kiwiqe;

namespace {

struct Fixture {
  std::vector<QEExample> batch;
  QeModel model;
};

// Acceptance-sized model: 4 layers, 4 heads, d=64.
Fixture make_fixture(std::size_t batch_size) {
  SyntheticTask task(SyntheticConfig{});
  const std::vector<std::size_t> shards{0, 1, 2};
  ModelConfig mc;
  return {task.generate_mixed(shards, batch_size, 1), QeModel(mc, task.vocabulary(mc.tokenizer))};
}

void BM_Predict(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(f.model.predict(f.batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Predict)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_TrainStep(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)));
  ParameterSet grads;
  for (auto _ : state) benchmark::DoNotOptimize(batch_gradients(f.model, f.batch, LossConfig{}, grads));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TrainStep)->Arg(16)->Unit(benchmark::kMillisecond);

void BM_GradientTraces(benchmark::State& state) {
  const Fixture f = make_fixture(static_cast<std::size_t>(state.range(0)));
  for (auto _ : state) benchmark::DoNotOptimize(f.model.traces(f.batch, true));
}
BENCHMARK(BM_GradientTraces)->Arg(16)->Unit(benchmark::kMillisecond);

}  // namespace
