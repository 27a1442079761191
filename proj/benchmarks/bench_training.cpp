#include <benchmark/benchmark.h>

#include "dropbp/dataset.hpp"
#include "dropbp/drop.hpp"
#include "dropbp/model.hpp"
#include "dropbp/sensitivity.hpp"

namespace {

using namespace dropbp;

ModelConfig toy_config() {
  ModelConfig c;
  c.n_units = 2;
  c.d_model = 64;
  c.d_ff = 256;
  c.n_heads = 4;
  c.vocab_size = 16;
  c.seq_len = 16;
  return c;
}

// One forward + backward at a uniform drop rate (range(0) tenths).
void BM_TrainStep(benchmark::State& state) {
  const ModelConfig cfg = toy_config();
  Rng init(7);
  const Model model(cfg, init);
  DatasetSpec spec;
  spec.seq_len = 16;
  spec.copy_examples = 2000;
  const Dataset data = make_dataset(spec);
  Rng rng(8);
  const Batch batch = data.sample_train(32, rng);
  const DropRates rates = DropRates::constant(cfg.n_layers(), static_cast<double>(state.range(0)) / 10);
  FlopsMeter meter;
  ActivationCache cache;
  std::uint64_t iter = 0;
  for (auto _ : state) {
    const auto plan = ExecutionPlan::from_drops(sample_decisions(rates, iter++, rng).dropped);
    const Tensor logits = forward(model, batch, plan, cache, meter);
    auto out = loss_and_grad(logits, batch.targets, meter);
    benchmark::DoNotOptimize(backward(model, cache, plan, out.grad, meter));
  }
  state.counters["flops"] =
      benchmark::Counter(static_cast<double>(meter.snapshot().total()), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(5)->Arg(9)->Unit(benchmark::kMillisecond);

void BM_Sensitivity(benchmark::State& state) {
  const ModelConfig cfg = toy_config();
  Rng init(9);
  const Model model(cfg, init);
  DatasetSpec spec;
  spec.seq_len = 16;
  spec.copy_examples = 2000;
  const Dataset data = make_dataset(spec);
  Rng rng(10);
  const Batch batch = data.sample_train(32, rng);
  FlopsMeter meter;
  for (auto _ : state) benchmark::DoNotOptimize(compute_sensitivities(model, batch, meter));
}
BENCHMARK(BM_Sensitivity)->Unit(benchmark::kMillisecond);

}  // namespace
