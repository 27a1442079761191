#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace dropbp {

// xoshiro256** seeded through splitmix64. Every draw is computed with integer
// arithmetic and explicit conversions, so a given (seed, stream) produces the
// same sequence on every platform. normal() goes through std::log/std::cos
// and is only as portable as the host libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  std::uint64_t next_u64();
  double uniform();                         // [0, 1), 53-bit resolution
  double uniform(double lo, double hi);
  double normal(double mean = 0.0, double stddev = 1.0);
  std::size_t uniform_index(std::size_t n);  // [0, n), unbiased

  // Independent generator derived from this one's seed.
  Rng split(std::uint64_t stream_id) const;

  // k distinct indices from [0, n), in sampled order.
  std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t splitmix64(std::uint64_t x);

// Stateless draw in [0, 1) keyed by a tuple of counters. Used for per-iteration
// drop decisions so that decision (seed, iter, layer) never depends on how
// many other draws happened before it.
double counter_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t a,
                       std::uint64_t b);

}  // namespace dropbp
