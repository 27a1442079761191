#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dropbp/model.hpp"
#include "dropbp/rng.hpp"

namespace dropbp::testing {

// 2-unit model small enough for finite differences and the scalar tape.
ModelConfig tiny_config(TrainingMode mode = TrainingMode::full);

// Random tokens in [0, vocab); the last position of every row is ignored.
Batch random_batch(std::size_t batch, std::size_t seq, std::size_t vocab, std::uint64_t seed);

// Rescales every parameter to N(0, stddev) and, in peft mode, gives the
// adapter B matrices nonzero values so every gradient is exercised.
void randomize(Model& model, double stddev, std::uint64_t seed);

// Loss of the model on the batch with nothing dropped.
double eval_loss(const Model& model, const Batch& batch);

// Fresh directory under the system temp dir, removed by the destructor.
class TempDir {
 public:
  TempDir();
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::string file(const std::string& name) const { return (path_ / name).string(); }

 private:
  std::filesystem::path path_;
};

}  // namespace dropbp::testing
