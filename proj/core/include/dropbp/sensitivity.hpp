#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dropbp/drop.hpp"
#include "dropbp/flops_meter.hpp"
#include "dropbp/model.hpp"

namespace dropbp {

struct SensitivityVector {
  std::vector<double> values;  // S_l >= 0, one per layer
  std::string batch_id;
  std::uint64_t iteration = 0;
};

// Per-layer backward FLOPs F_i (F_grad + F_param of the branch).
struct FlopsProfile {
  std::vector<double> per_layer;

  double total() const;
  // F_t = (1 - p_avg) * sum F_i
  double target(double p_avg) const { return (1.0 - p_avg) * total(); }
};

// S_l = sum_i (||g_i|| - ||g_i^(l)||)^2 where g_i is the gradient of the
// i-th trainable parameter tensor with nothing dropped and g_i^(l) the same
// gradient with only layer l dropped. One forward, 2n + 1 backward passes.
// Parameters are not modified. Throws NumericError naming the layer if any
// gradient norm is not finite.
SensitivityVector compute_sensitivities(const Model& model, const Batch& batch, FlopsMeter& meter,
                                        std::string batch_id = {}, std::uint64_t iteration = 0);

// Expected sensitivity removed by dropping: sum_i p_i * S_i.
double added_sensitivity(const std::vector<double>& sensitivity, const DropRates& rates);

// sum_i (1 - p_i) F_i <= (1 - p_avg) sum_i F_i, evaluated on the 0.1 grid in
// extended precision.
bool within_budget(const DropRates& rates, const FlopsProfile& flops, double p_avg);

// Greedy drop-rate allocation under the FLOPs budget. Starts at all zero and
// raises one layer by 0.1 at a time, picking the step that adds the least
// expected sensitivity per FLOP of backward work removed (ties: lower current
// rate, then lower index; layers at 1.0 are skipped) until the budget holds.
// Steps that become unnecessary are then undone, and the grid-rounded uniform
// allocation is returned instead if it removes strictly less sensitivity.
// Throws ArgumentError on size mismatch or p_avg outside [0, 1].
DropRates allocate(const std::vector<double>& sensitivity, const FlopsProfile& flops, double p_avg);

// Smallest grid-uniform allocation meeting the budget (all layers at
// ceil(10 p_avg) / 10).
DropRates grid_uniform_allocation(std::size_t n_layers, double p_avg);

struct AllocatorEvent {
  std::uint64_t iteration = 0;
  SensitivityVector sensitivity;
  FlopsProfile flops;
  double p_avg = 0.0;
  DropRates rates;
  double added_sensitivity = 0.0;
};

// At exactly the warmup boundary: compute sensitivities on `batch`, allocate,
// and return the event. Any other iteration returns nullopt.
std::optional<AllocatorEvent> maybe_reallocate(const WarmupSchedule& schedule,
                                               std::uint64_t iteration, const Model& model,
                                               const Batch& batch, const std::string& batch_id,
                                               const FlopsProfile& flops, double p_avg,
                                               FlopsMeter& meter);

}  // namespace dropbp
