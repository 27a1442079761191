#pragma once

#include <cstdint>

namespace dropbp {

enum class Phase {
  forward,         // F_out: producing activations
  backward_grad,   // F_grad: gradients with respect to activations
  backward_param,  // F_param: gradients with respect to parameters
};

struct FlopsCount {
  std::uint64_t forward = 0;
  std::uint64_t backward_grad = 0;
  std::uint64_t backward_param = 0;

  std::uint64_t backward() const { return backward_grad + backward_param; }
  std::uint64_t total() const { return forward + backward(); }

  friend FlopsCount operator-(const FlopsCount& a, const FlopsCount& b) {
    return {a.forward - b.forward, a.backward_grad - b.backward_grad,
            a.backward_param - b.backward_param};
  }
  friend FlopsCount operator+(const FlopsCount& a, const FlopsCount& b) {
    return {a.forward + b.forward, a.backward_grad + b.backward_grad,
            a.backward_param + b.backward_param};
  }
  friend bool operator==(const FlopsCount&, const FlopsCount&) = default;
};

// Accumulates floating-point operation counts for one training run.
// Convention: a multiply-accumulate is 2 flops, an elementwise op is 1 flop
// per output element. Counters only ever grow; take snapshots and subtract to
// get per-iteration deltas.
class FlopsMeter {
 public:
  void add(Phase phase, std::uint64_t flops) {
    switch (phase) {
      case Phase::forward: counts_.forward += flops; break;
      case Phase::backward_grad: counts_.backward_grad += flops; break;
      case Phase::backward_param: counts_.backward_param += flops; break;
    }
  }

  std::uint64_t forward() const { return counts_.forward; }
  std::uint64_t backward() const { return counts_.backward(); }
  std::uint64_t backward_grad() const { return counts_.backward_grad; }
  std::uint64_t backward_param() const { return counts_.backward_param; }
  FlopsCount snapshot() const { return counts_; }

 private:
  FlopsCount counts_;
};

}  // namespace dropbp
