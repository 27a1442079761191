#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dropbp/drop.hpp"
#include "dropbp/model.hpp"
#include "dropbp/rng.hpp"

namespace dropbp {

enum class Method { baseline, dropbp, freeze, layerdrop, pld };

const char* to_string(Method method);
Method parse_method(const std::string& text);

// Progressive Layer Dropping keep-probability schedule:
//   theta(t, l) = 1 - depth_frac(l) * (1 - theta_bar(t))
//   theta_bar(t) = floor + (1 - floor) * exp(-decay * t)
// with t the fraction of training done and depth_frac(l) = (l + 1) / L.
struct PldSchedule {
  double decay = 5.0;
  double floor = 0.5;

  double theta_bar(double iter_frac) const;
  // Picks `floor` so that the run-averaged relative block FLOPs, i.e. the mean
  // keep probability over layers and over t in [0, 1], equals
  // relative_flops. Throws ArgumentError if no floor in [0, 1] achieves it.
  static PldSchedule for_relative_flops(double relative_flops, std::size_t n_layers,
                                        double decay = 5.0);
  // Mean keep probability over layers and training time (closed form).
  double average_keep(std::size_t n_layers) const;
};

double pld_keep_prob(double layer_depth_frac, double iter_frac, const PldSchedule& schedule);

struct BaselineSpec {
  Method kind = Method::baseline;
  double skip_rate = 0.0;  // DropBP p_avg, freeze fraction or LayerDrop rate
  PldSchedule pld;
};

// Lowest floor(n_layers * p) layers are frozen (false), the rest trainable.
std::vector<bool> freeze_mask(std::size_t n_layers, double p);
// Number of frozen layers, floor(n_layers * p) with a guard against
// representation error (0.875 * 64 must give 56).
std::size_t frozen_count(std::size_t n_layers, double p);

// LayerDrop: Bernoulli(p_i) per layer, applied to forward and backward.
ExecutionPlan layerdrop_plan(const DropRates& rates, std::uint64_t iteration, const Rng& rng);
// PLD at a given point of training.
ExecutionPlan pld_plan(const PldSchedule& schedule, std::size_t n_layers, double iter_frac,
                       std::uint64_t iteration, const Rng& rng);
// Freezing: frozen layers run forward only; backward stops at the lowest
// trainable layer.
ExecutionPlan freeze_plan(std::size_t n_layers, double p);

}  // namespace dropbp
