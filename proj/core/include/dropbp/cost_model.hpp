#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "dropbp/drop.hpp"
#include "dropbp/model.hpp"
#include "dropbp/sensitivity.hpp"

namespace dropbp {

// Closed-form FLOPs of one residual branch, split the same way the kernels
// meter them. "out" is forward work (F_out), "grad" activation-gradient work
// (F_grad), "param" parameter-gradient work (F_param).
struct LayerCost {
  LayerIndex index;
  // Base linear maps (the 2mkn terms). In peft mode base weights are frozen
  // and base_param is 0.
  std::uint64_t base_out = 0, base_grad = 0, base_param = 0;
  // Low-rank adapters (peft only).
  std::uint64_t adapter_out = 0, adapter_grad = 0, adapter_param = 0;
  // Attention scores and context products, quadratic in sequence length.
  std::uint64_t attention_out = 0, attention_grad = 0;
  // Layer norm, softmax, GELU, scaling and residual/accumulation adds.
  std::uint64_t elementwise_out = 0, elementwise_grad = 0, elementwise_param = 0;
  // Bytes this branch caches for backward when it is kept.
  std::uint64_t activation_bytes = 0;

  std::uint64_t F_out() const { return base_out + adapter_out + attention_out + elementwise_out; }
  std::uint64_t F_grad() const {
    return base_grad + adapter_grad + attention_grad + elementwise_grad;
  }
  std::uint64_t F_param() const { return base_param + adapter_param + elementwise_param; }
  std::uint64_t F_backward() const { return F_grad() + F_param(); }
};

// Embeddings, final layer norm, head and loss: never droppable.
struct OffBlockCost {
  std::uint64_t F_out = 0, F_grad = 0, F_param = 0;
  std::uint64_t activation_bytes = 0;
  std::uint64_t F_backward() const { return F_grad + F_param; }
};

struct CostShape {
  std::size_t batch = 1;
  std::size_t seq = 1;
};

std::vector<LayerCost> layer_costs(const ModelConfig& config, CostShape shape);
// embedding_grads: whether token/position tables receive gradients (true for
// full mode with untruncated backward).
OffBlockCost off_block_cost(const ModelConfig& config, CostShape shape, bool embedding_grads);
OffBlockCost off_block_cost(const ModelConfig& config, CostShape shape);

FlopsProfile flops_profile(const std::vector<LayerCost>& costs);

// sum_i [F_out,i + (1 - p_i)(F_grad,i + F_param,i)] (+ off-block forward and backward).
double expected_block_flops(const std::vector<LayerCost>& costs, const DropRates& rates);
double expected_flops(const std::vector<LayerCost>& costs, const OffBlockCost& off,
                      const DropRates& rates);
// Same with every p_i = 0.
double baseline_flops(const std::vector<LayerCost>& costs, const OffBlockCost& off);

// Closed-form block-relative reduction: (2/3) p_avg in full mode, (1/2) p_avg
// in peft mode.
double reduction_ratio(double p_avg, TrainingMode mode);
// sum_i p_i (F_grad,i + F_param,i) / sum_i (F_out,i + F_grad,i + F_param,i),
// evaluated on the actual per-layer costs.
double block_reduction_ratio(const std::vector<LayerCost>& costs, const DropRates& rates);
// Same, including off-block work in the denominator.
double model_reduction_ratio(const std::vector<LayerCost>& costs, const OffBlockCost& off,
                             const DropRates& rates);

struct ActivationBudget {
  double block_bytes = 0.0;  // sum_i (1 - p_i) activation_bytes_i
  std::uint64_t non_block_bytes = 0;
  double total() const { return block_bytes + static_cast<double>(non_block_bytes); }
};
ActivationBudget activation_budget(const ModelConfig& config, CostShape shape,
                                   const DropRates& rates);

// Largest sequence length whose expected cached bytes fit in budget_bytes.
// nullopt when even length 1 does not fit (budget below the non-block floor).
std::optional<std::size_t> max_seq_len(const ModelConfig& config, std::size_t batch,
                                       const DropRates& rates, double budget_bytes);

struct CostReport {
  double p_avg = 0.0;
  TrainingMode mode = TrainingMode::full;
  double baseline_total = 0.0;    // whole-model FLOPs per iteration, nothing dropped
  double dropbp_total = 0.0;      // whole-model expected FLOPs per iteration
  double theoretical_ratio = 0.0; // closed form
  double block_ratio = 0.0;       // from per-layer costs, blocks only
  double model_ratio = 0.0;       // from per-layer costs, whole model
  std::optional<double> measured_block_ratio;
  std::optional<double> measured_model_ratio;
  double baseline_bytes = 0.0;
  double dropbp_bytes = 0.0;
};
CostReport cost_report(const ModelConfig& config, CostShape shape, const DropRates& rates);

// Metered counterpart of the closed forms: one undropped step, then `iters`
// steps with drop decisions sampled from `rates`.
struct MeasuredReduction {
  std::uint64_t iters = 0;
  FlopsCount baseline;       // per step, nothing dropped
  FlopsCount off_block;      // per step, every branch skipped in forward too
  FlopsCount dropped_total;  // summed over the sampled steps
  double mean_dropped = 0.0; // average fraction of layers dropped per step
  // Saved FLOPs over baseline block FLOPs (baseline minus off_block).
  double block_ratio = 0.0;
  double model_ratio = 0.0;
};
MeasuredReduction measure_reduction(const Model& model, const Batch& batch,
                                    const DropRates& rates, std::uint64_t iters, const Rng& rng);
// Fills the measured fields of `report` from `m`.
void attach_measurement(CostReport& report, const MeasuredReduction& m);

}  // namespace dropbp
