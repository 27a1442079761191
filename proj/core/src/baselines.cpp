#include "dropbp/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "dropbp/error.hpp"

namespace dropbp {

const char* to_string(Method method) {
  switch (method) {
    case Method::baseline: return "baseline";
    case Method::dropbp: return "dropbp";
    case Method::freeze: return "freeze";
    case Method::layerdrop: return "layerdrop";
    case Method::pld: return "pld";
  }
  return "?";
}

Method parse_method(const std::string& text) {
  for (Method m : {Method::baseline, Method::dropbp, Method::freeze, Method::layerdrop, Method::pld}) {
    if (text == to_string(m)) return m;
  }
  throw InputError("unknown method '" + text + "'");
}

double PldSchedule::theta_bar(double iter_frac) const {
  return floor + (1.0 - floor) * std::exp(-decay * iter_frac);
}

namespace {

// Mean of (l + 1) / L over layers.
double mean_depth_frac(std::size_t n_layers) {
  return static_cast<double>(n_layers + 1) / (2.0 * static_cast<double>(n_layers));
}

// Integral over t in [0, 1] of (1 - theta_bar(t)) / (1 - floor).
double decay_mass(double decay) {
  return decay > 0.0 ? 1.0 - (1.0 - std::exp(-decay)) / decay : 0.0;
}

}  // namespace

double PldSchedule::average_keep(std::size_t n_layers) const {
  return 1.0 - mean_depth_frac(n_layers) * (1.0 - floor) * decay_mass(decay);
}

PldSchedule PldSchedule::for_relative_flops(double relative_flops, std::size_t n_layers,
                                            double decay) {
  if (n_layers == 0) throw ArgumentError("PLD needs at least one layer");
  const double mass = mean_depth_frac(n_layers) * decay_mass(decay);
  if (mass <= 0.0) throw ArgumentError("PLD decay must be positive");
  const double floor = 1.0 - (1.0 - relative_flops) / mass;
  if (!(floor >= 0.0 && floor <= 1.0)) {
    throw ArgumentError("relative FLOPs " + std::to_string(relative_flops) +
                        " is not reachable by the PLD schedule");
  }
  return {decay, floor};
}

double pld_keep_prob(double layer_depth_frac, double iter_frac, const PldSchedule& schedule) {
  if (!(layer_depth_frac >= 0.0 && layer_depth_frac <= 1.0) ||
      !(iter_frac >= 0.0 && iter_frac <= 1.0)) {
    throw ArgumentError("PLD fractions must lie in [0, 1]");
  }
  return 1.0 - layer_depth_frac * (1.0 - schedule.theta_bar(iter_frac));
}

std::size_t frozen_count(std::size_t n_layers, double p) {
  if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("freeze rate outside [0, 1]");
  return static_cast<std::size_t>(std::floor(static_cast<double>(n_layers) * p + 1e-9));
}

std::vector<bool> freeze_mask(std::size_t n_layers, double p) {
  const std::size_t frozen = frozen_count(n_layers, p);
  std::vector<bool> trainable(n_layers, true);
  std::fill_n(trainable.begin(), frozen, false);
  return trainable;
}

ExecutionPlan layerdrop_plan(const DropRates& rates, std::uint64_t iteration, const Rng& rng) {
  ExecutionPlan plan = ExecutionPlan::from_drops(sample_decisions(rates, iteration, rng).dropped);
  plan.drop_in_forward = true;
  return plan;
}

ExecutionPlan pld_plan(const PldSchedule& schedule, std::size_t n_layers, double iter_frac,
                       std::uint64_t iteration, const Rng& rng) {
  std::vector<double> drop(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    const double depth = static_cast<double>(l + 1) / static_cast<double>(n_layers);
    drop[l] = std::clamp(1.0 - pld_keep_prob(depth, iter_frac, schedule), 0.0, 1.0);
  }
  return layerdrop_plan(DropRates(std::move(drop), 0.0), iteration, rng);
}

ExecutionPlan freeze_plan(std::size_t n_layers, double p) {
  const auto trainable = freeze_mask(n_layers, p);
  std::vector<bool> dropped(n_layers);
  for (std::size_t i = 0; i < n_layers; ++i) dropped[i] = !trainable[i];
  ExecutionPlan plan = ExecutionPlan::from_drops(dropped);
  plan.backward_floor = frozen_count(n_layers, p);
  return plan;
}

}  // namespace dropbp
