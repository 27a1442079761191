#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "dropbp/rng.hpp"

namespace dropbp {

// Per-layer drop rates live on a 0.1 grid.
inline constexpr int kRateSteps = 10;

bool on_grid(double p);
double round_to_grid(double p);  // nearest grid point, ties away from zero

// Per-layer backward drop probabilities plus the target average they were
// derived from. Values are in [0, 1]; allocator output is always on the grid.
class DropRates {
 public:
  DropRates() = default;
  DropRates(std::vector<double> rates, double target_avg);
  // rates[i] = steps[i] / 10, exactly.
  static DropRates from_steps(const std::vector<int>& steps, double target_avg);
  // Any probability, grid or not (warmup overrides, cost sweeps).
  static DropRates constant(std::size_t n_layers, double p);

  const std::vector<double>& rates() const { return rates_; }
  double operator[](std::size_t i) const { return rates_[i]; }
  std::size_t size() const { return rates_.size(); }
  double target_avg() const { return target_avg_; }
  bool on_grid() const;
  double mean() const;

  friend bool operator==(const DropRates&, const DropRates&) = default;

 private:
  std::vector<double> rates_;
  double target_avg_ = 0.0;
};

// All layers at p_avg. Throws ArgumentError when p_avg is off the grid.
DropRates uniform_rates(std::size_t n_layers, double p_avg);

struct DropDecisions {
  std::vector<bool> dropped;
  std::uint64_t iteration = 0;
  std::uint64_t stream = 0;

  std::size_t count_dropped() const;
};

// Independent Bernoulli(p_i) per layer, keyed on (rng seed, rng stream, iter,
// layer) so the result depends on nothing else.
DropDecisions sample_decisions(const DropRates& rates, std::uint64_t iteration, const Rng& rng);

enum class WarmupPhase { uniform, sensitivity };

struct WarmupSchedule {
  std::uint64_t total_iters = 0;
  double warmup_fraction = 0.1;

  // First iteration of the sensitivity-based phase: floor(fraction * total).
  std::uint64_t boundary() const;
  WarmupPhase phase(std::uint64_t iteration) const {
    return iteration < boundary() ? WarmupPhase::uniform : WarmupPhase::sensitivity;
  }
};

}  // namespace dropbp
