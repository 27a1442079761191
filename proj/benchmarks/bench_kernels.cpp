#include <benchmark/benchmark.h>

#include "dropbp/ops.hpp"
#include "dropbp/rng.hpp"

namespace {

using dropbp::FlopsMeter;
using dropbp::Rng;
using dropbp::Tensor;

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng) {
  Tensor t({r, c});
  for (double& v : t.values()) v = rng.normal();
  return t;
}

void BM_MatmulForward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor(n, n, rng), b = random_tensor(n, n, rng);
  FlopsMeter meter;
  for (auto _ : state) benchmark::DoNotOptimize(dropbp::ops::matmul_forward(a, b, meter));
  state.counters["flops"] =
      benchmark::Counter(static_cast<double>(meter.forward()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_MatmulForward)->Arg(64)->Arg(128)->Arg(256);

void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(2);
  const Tensor a = random_tensor(n, n, rng), b = random_tensor(n, n, rng),
               g = random_tensor(n, n, rng);
  FlopsMeter meter;
  for (auto _ : state) benchmark::DoNotOptimize(dropbp::ops::matmul_backward(g, a, b, meter));
  state.counters["flops"] =
      benchmark::Counter(static_cast<double>(meter.backward()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_MatmulBackward)->Arg(64)->Arg(128)->Arg(256);

void BM_LayerNorm(benchmark::State& state) {
  const auto rows = static_cast<std::size_t>(state.range(0));
  Rng rng(3);
  const Tensor x = random_tensor(rows, 64, rng);
  const Tensor gamma = Tensor::full({64}, 1.0), beta({64});
  FlopsMeter meter;
  for (auto _ : state) {
    benchmark::DoNotOptimize(dropbp::ops::layer_norm_forward(x, gamma, beta, meter));
  }
}
BENCHMARK(BM_LayerNorm)->Arg(256)->Arg(2048);

}  // namespace
