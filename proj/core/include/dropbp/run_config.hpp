#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dropbp/baselines.hpp"
#include "dropbp/dataset.hpp"
#include "dropbp/model.hpp"
#include "dropbp/optim.hpp"

namespace dropbp {

struct RunConfig {
  ModelConfig model;
  DatasetSpec dataset;

  Method method = Method::baseline;
  double p_avg = 0.5;          // dropbp target average rate
  double skip_rate = 0.25;     // freeze fraction or LayerDrop rate
  double relative_flops = 0.75;  // PLD run-average block FLOPs
  double pld_decay = 5.0;
  double warmup_fraction = 0.1;
  // Uniform rate during warmup; default is p_avg rounded to the 0.1 grid.
  std::optional<double> warmup_rate;
  // dropbp only: use these per-layer rates for the whole run, with no warmup
  // and no sensitivity allocation.
  std::vector<double> fixed_rates;

  std::uint64_t iters = 1000;
  std::size_t batch_size = 32;
  std::size_t micro_batch_size = 0;  // 0 = batch_size (no accumulation)
  double lr = 3e-4;
  double lr_min = 0.0;
  AdamWConfig adamw;
  std::uint64_t seed = 0;

  std::size_t val_every = 50;
  std::size_t val_examples = 256;
  std::string log_path;
  std::string init_checkpoint;  // load parameters before training
  std::string save_checkpoint;  // save parameters after training

  void validate() const;  // throws ArgumentError
  std::string to_json() const;
  static RunConfig from_json(const std::string& text);  // missing keys keep defaults

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

// Dotted names of every setting, e.g. "model.d_model", "adamw.beta1".
std::vector<std::string> config_keys();

RunConfig load_run_config(const std::string& path);
// key=value with a dotted key. The value is parsed as JSON when it parses,
// otherwise taken as a string. Throws InputError on an unknown key.
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);
void apply_override(RunConfig& cfg, const std::string& assignment);
// DROPBP_<KEY> with dots turned into underscores and upper-cased, e.g.
// DROPBP_MODEL_D_MODEL. Returns the keys that were set.
std::vector<std::string> apply_env_overrides(
    RunConfig& cfg, const std::function<const char*(const char*)>& getenv);
std::string env_name(const std::string& key);

}  // namespace dropbp
