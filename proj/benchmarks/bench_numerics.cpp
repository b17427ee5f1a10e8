#include <benchmark/benchmark.h>

#include <vector>

#include "kiwiqe/autodiff.hpp"
#include "kiwiqe/rng.hpp"
#include "kiwiqe/simplex.hpp"

using namespace kiwiqe;

namespace {

Tensor random_matrix(std::size_t rows, std::size_t cols, std::uint64_t seed) {
  Rng rng(seed);
  Tensor t = Tensor::matrix(rows, cols);
  for (double& v : t.values()) v = rng.uniform(-1, 1);
  return t;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  ad::Tape tape;
  const ad::Var a = tape.constant(random_matrix(n, n, 1));
  const ad::Var b = tape.constant(random_matrix(n, n, 2));
  for (auto _ : state) {
    ad::Var c = ad::matmul(a, b);
    benchmark::DoNotOptimize(c.value().values().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<long>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(128);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  const Tensor a0 = random_matrix(n, n, 1), b0 = random_matrix(n, n, 2);
  for (auto _ : state) {
    ad::Tape tape;
    ad::Var a = tape.leaf(a0), b = tape.leaf(b0);
    ad::Var loss = ad::sum(ad::matmul(a, b));
    tape.backward(loss);
    benchmark::DoNotOptimize(tape.grad(a).values().data());
  }
}
BENCHMARK(BM_MatmulBackward)->Arg(16)->Arg(64);

void BM_Sparsemax(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  std::vector<double> z(n), out(n);
  for (double& v : z) v = rng.uniform(-2, 2);
  for (auto _ : state) {
    benchmark::DoNotOptimize(sparsemax(z, out));
    benchmark::ClobberMemory();
  }
}
BENCHMARK(BM_Sparsemax)->Arg(5)->Arg(16)->Arg(128);

}  // namespace
