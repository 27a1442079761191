#include "dropbp/drop.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dropbp/error.hpp"

namespace dropbp {

bool on_grid(double p) {
  const double scaled = p * kRateSteps;
  return p >= 0.0 && p <= 1.0 && std::abs(scaled - std::round(scaled)) < 1e-9;
}

double round_to_grid(double p) {
  const double clamped = std::clamp(p, 0.0, 1.0);
  return std::round(clamped * kRateSteps) / kRateSteps;
}

DropRates::DropRates(std::vector<double> rates, double target_avg)
    : rates_(std::move(rates)), target_avg_(target_avg) {
  for (double p : rates_) {
    if (!(p >= 0.0 && p <= 1.0)) throw ArgumentError("drop rate outside [0, 1]");
  }
  if (!(target_avg >= 0.0 && target_avg <= 1.0)) {
    throw ArgumentError("target average drop rate outside [0, 1]");
  }
}

DropRates DropRates::from_steps(const std::vector<int>& steps, double target_avg) {
  std::vector<double> rates;
  rates.reserve(steps.size());
  for (int s : steps) {
    if (s < 0 || s > kRateSteps) throw ArgumentError("grid step outside [0, 10]");
    rates.push_back(static_cast<double>(s) / kRateSteps);
  }
  return DropRates(std::move(rates), target_avg);
}

DropRates DropRates::constant(std::size_t n_layers, double p) {
  return DropRates(std::vector<double>(n_layers, p), p);
}

bool DropRates::on_grid() const {
  return std::all_of(rates_.begin(), rates_.end(), [](double p) { return dropbp::on_grid(p); });
}

double DropRates::mean() const {
  if (rates_.empty()) return 0.0;
  return std::accumulate(rates_.begin(), rates_.end(), 0.0) / static_cast<double>(rates_.size());
}

DropRates uniform_rates(std::size_t n_layers, double p_avg) {
  if (!on_grid(p_avg)) {
    throw ArgumentError("uniform drop rate " + std::to_string(p_avg) +
                        " is not on the 0.1 grid; round it or use the allocator");
  }
  return DropRates::from_steps(
      std::vector<int>(n_layers, static_cast<int>(std::lround(p_avg * kRateSteps))), p_avg);
}

std::size_t DropDecisions::count_dropped() const {
  return static_cast<std::size_t>(std::count(dropped.begin(), dropped.end(), true));
}

DropDecisions sample_decisions(const DropRates& rates, std::uint64_t iteration, const Rng& rng) {
  DropDecisions d;
  d.iteration = iteration;
  d.stream = rng.stream();
  d.dropped.resize(rates.size());
  for (std::size_t i = 0; i < rates.size(); ++i) {
    d.dropped[i] = counter_uniform(rng.seed(), rng.stream(), iteration, i) < rates[i];
  }
  return d;
}

std::uint64_t WarmupSchedule::boundary() const {
  return static_cast<std::uint64_t>(std::floor(warmup_fraction * static_cast<double>(total_iters)));
}

}  // namespace dropbp
