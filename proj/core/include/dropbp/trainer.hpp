#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "dropbp/dataset.hpp"
#include "dropbp/metrics_log.hpp"
#include "dropbp/model.hpp"
#include "dropbp/run_config.hpp"
#include "dropbp/sensitivity.hpp"

namespace dropbp {

struct RunMetrics {
  std::vector<IterRecord> iters;
  std::vector<ValRecord> vals;
  std::vector<AllocatorEvent> allocator_events;
  std::optional<WarmupRecord> warmup;
  FlopsCount total_flops;     // training steps plus overhead
  FlopsCount overhead_flops;  // sensitivity passes
  bool aborted = false;
  std::string abort_reason;

  std::optional<double> final_val_loss() const {
    return vals.empty() ? std::nullopt : std::optional<double>(vals.back().loss);
  }
};

// Mean loss over the validation split (at most val_examples examples),
// weighted by scored tokens. Forward only, nothing dropped.
double evaluate(const Model& model, const Dataset& data, std::size_t batch_size,
                std::size_t val_examples);

// Seeds derived from RunConfig::seed.
Rng model_rng(std::uint64_t seed);
Rng data_rng(std::uint64_t seed);
Rng drop_rng(std::uint64_t seed);

// Applies the method's trainability rules to a fresh model (freeze).
void prepare_model(const RunConfig& cfg, Model& model);

// Called after every optimizer step with that step's record and plan.
using StepObserver =
    std::function<void(const IterRecord&, const ExecutionPlan&, const Model&)>;

// Runs the training loop on an existing model. NumericError from the loss or
// gradients ends the run with an abort record instead of propagating.
RunMetrics train(const RunConfig& cfg, Model& model, const Dataset& data, MetricsLog& log,
                 const StepObserver& observer = {});

// Builds the dataset and model from the config (loading init_checkpoint if
// set), writes the log to cfg.log_path if set, trains, and saves
// save_checkpoint if set.
RunMetrics train(const RunConfig& cfg);

}  // namespace dropbp
