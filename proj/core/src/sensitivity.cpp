#include "dropbp/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/multiprecision/cpp_int.hpp>

#include "dropbp/error.hpp"

namespace dropbp {

namespace {

using Rational = boost::multiprecision::cpp_rational;

int grid_step(double p) { return static_cast<int>(std::lround(p * kRateSteps)); }

// Gradient L2 norm per trainable parameter tensor, in parameter order.
std::vector<double> group_norms(const Gradients& grads) {
  std::vector<double> norms;
  for (const auto& g : grads.by_param) {
    if (g) norms.push_back(g->l2_norm());
  }
  return norms;
}

void require_finite(const std::vector<double>& norms, const std::string& where) {
  for (double n : norms) {
    if (!std::isfinite(n)) throw NumericError("non-finite gradient norm " + where);
  }
}

// Budget slack in exact arithmetic, scaled by 10:
//   10 (1 - p_avg) sum F - sum (10 - k_i) F_i   (>= 0 means within budget)
Rational budget_slack(const std::vector<int>& steps, const std::vector<double>& flops,
                      double p_avg) {
  Rational total = 0, used = 0;
  for (std::size_t i = 0; i < flops.size(); ++i) {
    const Rational f(flops[i]);
    total += f;
    used += (kRateSteps - steps[i]) * f;
  }
  return (kRateSteps - kRateSteps * Rational(p_avg)) * total - used;
}

std::vector<int> steps_of(const DropRates& rates) {
  std::vector<int> steps;
  for (double p : rates.rates()) steps.push_back(grid_step(p));
  return steps;
}

}  // namespace

double FlopsProfile::total() const {
  return std::accumulate(per_layer.begin(), per_layer.end(), 0.0);
}

SensitivityVector compute_sensitivities(const Model& model, const Batch& batch, FlopsMeter& meter,
                                        std::string batch_id, std::uint64_t iteration) {
  if (batch.rows() == 0) throw ArgumentError("sensitivity batch is empty");
  const std::size_t n_layers = model.config().n_layers();
  ActivationCache cache;
  ExecutionPlan plan = ExecutionPlan::keep_all(n_layers);
  const Tensor logits = forward(model, batch, plan, cache, meter);
  const LossOutput out = loss_and_grad(logits, batch.targets, meter);

  const auto base = group_norms(backward(model, cache, plan, out.grad, meter));
  require_finite(base, "in the undropped backward pass");

  SensitivityVector s;
  s.batch_id = std::move(batch_id);
  s.iteration = iteration;
  s.values.resize(n_layers);
  for (std::size_t l = 0; l < n_layers; ++l) {
    plan.routes.assign(n_layers, Route::both);
    plan.routes[l] = Route::residual_only;
    const auto dropped = group_norms(backward(model, cache, plan, out.grad, meter));
    require_finite(dropped, "with layer " + LayerIndex::from_flat(l).name() + " dropped");
    double sum = 0.0;
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double diff = base[i] - dropped[i];
      sum += diff * diff;
    }
    s.values[l] = sum;
  }
  return s;
}

double added_sensitivity(const std::vector<double>& sensitivity, const DropRates& rates) {
  if (sensitivity.size() != rates.size()) throw ArgumentError("sensitivity/rates size mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < rates.size(); ++i) total += rates[i] * sensitivity[i];
  return total;
}

bool within_budget(const DropRates& rates, const FlopsProfile& flops, double p_avg) {
  if (rates.size() != flops.per_layer.size()) throw ArgumentError("rates/FLOPs size mismatch");
  if (rates.on_grid()) return budget_slack(steps_of(rates), flops.per_layer, p_avg) >= 0;
  Rational total = 0, used = 0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const Rational f(flops.per_layer[i]);
    total += f;
    used += (1 - Rational(rates[i])) * f;
  }
  return used <= (1 - Rational(p_avg)) * total;
}

DropRates grid_uniform_allocation(std::size_t n_layers, double p_avg) {
  if (!(p_avg >= 0.0 && p_avg <= 1.0)) throw ArgumentError("p_avg outside [0, 1]");
  // Equal steps on every layer: budget holds iff 10 - k <= 10 (1 - p_avg).
  const Rational limit = kRateSteps - kRateSteps * Rational(p_avg);
  int k = 0;
  while (k < kRateSteps && Rational(kRateSteps - k) > limit) ++k;
  return DropRates::from_steps(std::vector<int>(n_layers, k), p_avg);
}

DropRates allocate(const std::vector<double>& sensitivity, const FlopsProfile& flops,
                   double p_avg) {
  const std::size_t n = sensitivity.size();
  if (flops.per_layer.size() != n) {
    throw ArgumentError("sensitivity has " + std::to_string(n) + " layers, FLOPs profile has " +
                        std::to_string(flops.per_layer.size()));
  }
  if (!(p_avg >= 0.0 && p_avg <= 1.0)) {
    throw ArgumentError("target average drop rate must lie in [0, 1] (F_t < 0 is infeasible)");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(sensitivity[i] >= 0.0) || !(flops.per_layer[i] >= 0.0)) {
      throw ArgumentError("sensitivities and FLOPs must be non-negative");
    }
  }
  const auto& f = flops.per_layer;
  auto ratio = [&](std::size_t i) { return sensitivity[i] / f[i]; };

  std::vector<int> steps(n, 0);
  Rational slack = budget_slack(steps, f, p_avg);
  while (slack < 0) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < n; ++i) {
      if (steps[i] >= kRateSteps || f[i] <= 0.0) continue;
      if (!best) {
        best = i;
        continue;
      }
      const double ri = ratio(i), rb = ratio(*best);
      if (ri < rb || (ri == rb && steps[i] < steps[*best])) best = i;
    }
    if (!best) throw ArgumentError("FLOPs budget cannot be met");
    ++steps[*best];
    slack += Rational(f[*best]);
  }

  // Undo steps the budget no longer needs, most sensitive per FLOP first.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (f[a] <= 0.0 || f[b] <= 0.0) return f[a] > f[b];
    return ratio(a) > ratio(b);
  });
  for (std::size_t i : order) {
    while (steps[i] > 0 && slack >= Rational(f[i])) {
      --steps[i];
      slack -= Rational(f[i]);
    }
  }

  DropRates greedy = DropRates::from_steps(steps, p_avg);
  DropRates uniform = grid_uniform_allocation(n, p_avg);
  if (added_sensitivity(sensitivity, uniform) < added_sensitivity(sensitivity, greedy)) {
    return uniform;
  }
  return greedy;
}

std::optional<AllocatorEvent> maybe_reallocate(const WarmupSchedule& schedule,
                                               std::uint64_t iteration, const Model& model,
                                               const Batch& batch, const std::string& batch_id,
                                               const FlopsProfile& flops, double p_avg,
                                               FlopsMeter& meter) {
  if (iteration != schedule.boundary()) return std::nullopt;
  AllocatorEvent ev;
  ev.iteration = iteration;
  ev.sensitivity = compute_sensitivities(model, batch, meter, batch_id, iteration);
  ev.flops = flops;
  ev.p_avg = p_avg;
  ev.rates = allocate(ev.sensitivity.values, flops, p_avg);
  ev.added_sensitivity = added_sensitivity(ev.sensitivity.values, ev.rates);
  return ev;
}

}  // namespace dropbp
