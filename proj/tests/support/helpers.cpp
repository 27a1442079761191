#include "helpers.hpp"

#include <unistd.h>

#include <atomic>

#include "dropbp/ops.hpp"

namespace dropbp::testing {

ModelConfig tiny_config(TrainingMode mode) {
  ModelConfig c;
  c.n_units = 2;
  c.d_model = 8;
  c.d_ff = 16;
  c.n_heads = 2;
  c.vocab_size = 11;
  c.seq_len = 5;
  c.mode = mode;
  c.adapter_rank = mode == TrainingMode::peft ? 2 : 0;
  return c;
}

Batch random_batch(std::size_t batch, std::size_t seq, std::size_t vocab, std::uint64_t seed) {
  Rng rng(seed, 99);
  Batch b;
  b.batch_size = batch;
  b.seq = seq;
  for (std::size_t i = 0; i < batch * seq; ++i) {
    b.tokens.push_back(static_cast<int>(rng.uniform_index(vocab)));
  }
  for (std::size_t i = 0; i < batch * seq; ++i) {
    const bool last = (i % seq) + 1 == seq;
    b.targets.push_back(last ? ops::kIgnoreIndex : static_cast<int>(rng.uniform_index(vocab)));
  }
  return b;
}

void randomize(Model& model, double stddev, std::uint64_t seed) {
  Rng rng(seed, 7);
  for (auto& p : model.parameters()) {
    const bool gamma = p.name.ends_with(".gamma");
    for (double& v : p.value.values()) v = (gamma ? 1.0 : 0.0) + rng.normal(0.0, stddev);
  }
}

double eval_loss(const Model& model, const Batch& batch) {
  FlopsMeter meter;
  ActivationCache cache;
  const Tensor logits =
      forward(model, batch, ExecutionPlan::keep_all(model.config().n_layers()), cache, meter);
  return loss(logits, batch.targets);
}

TempDir::TempDir() {
  static std::atomic<int> counter{0};
  path_ = std::filesystem::temp_directory_path() /
          ("dropbp_test_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
  std::filesystem::create_directories(path_);
}

TempDir::~TempDir() {
  std::error_code ec;
  std::filesystem::remove_all(path_, ec);
}

}  // namespace dropbp::testing
