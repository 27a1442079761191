#include <gtest/gtest.h>

#include "dropbp/drop.hpp"
#include "dropbp/error.hpp"

using namespace dropbp;

TEST(DropRates, GridChecks) {
  EXPECT_TRUE(on_grid(0.3));
  EXPECT_TRUE(on_grid(1.0));
  EXPECT_FALSE(on_grid(0.875));
  EXPECT_DOUBLE_EQ(round_to_grid(0.875), 0.9);
  EXPECT_DOUBLE_EQ(round_to_grid(0.85), 0.9);
  EXPECT_DOUBLE_EQ(round_to_grid(0.04), 0.0);
}

TEST(DropRates, UniformRates) {
  EXPECT_EQ(uniform_rates(4, 0.5).rates(), (std::vector<double>{0.5, 0.5, 0.5, 0.5}));
  EXPECT_EQ(uniform_rates(2, 0.0).rates(), (std::vector<double>{0.0, 0.0}));
  EXPECT_THROW(uniform_rates(64, 0.875), ArgumentError);
}

TEST(DropRates, FromStepsIsExact) {
  const auto r = DropRates::from_steps({0, 3, 10}, 0.4);
  EXPECT_EQ(r[1], 3.0 / 10.0);
  EXPECT_TRUE(r.on_grid());
  EXPECT_NEAR(r.mean(), 13.0 / 30.0, 1e-15);
  EXPECT_THROW(DropRates({0.5, 1.5}, 0.5), ArgumentError);
  EXPECT_FALSE(DropRates::constant(3, 0.875).on_grid());
}

TEST(Decisions, ExtremesAndDeterminism) {
  const Rng rng(5);
  for (std::uint64_t it = 0; it < 50; ++it) {
    EXPECT_EQ(sample_decisions(DropRates::constant(6, 0.0), it, rng).count_dropped(), 0u);
    EXPECT_EQ(sample_decisions(DropRates::constant(6, 1.0), it, rng).count_dropped(), 6u);
  }
  const auto rates = DropRates::constant(8, 0.5);
  EXPECT_EQ(sample_decisions(rates, 17, rng).dropped, sample_decisions(rates, 17, Rng(5)).dropped);
}

TEST(Decisions, DropFrequencyConcentrates) {
  const Rng rng(11);
  const auto rates = DropRates::constant(4, 0.5);
  std::vector<int> counts(4, 0);
  for (std::uint64_t it = 0; it < 10000; ++it) {
    const auto d = sample_decisions(rates, it, rng);
    for (std::size_t l = 0; l < 4; ++l) counts[l] += d.dropped[l];
  }
  for (int c : counts) {
    EXPECT_GE(c, 4800);
    EXPECT_LE(c, 5200);
  }
}

TEST(Decisions, ExpectedExecutedLayers) {
  const Rng rng(12);
  const DropRates rates({0.0, 0.2, 0.5, 0.9, 1.0, 0.3}, 0.0);
  double expected = 0.0;
  for (double p : rates.rates()) expected += 1.0 - p;
  double total = 0.0;
  for (std::uint64_t it = 0; it < 10000; ++it) {
    total += 6.0 - static_cast<double>(sample_decisions(rates, it, rng).count_dropped());
  }
  EXPECT_NEAR(total / 10000.0, expected, 0.02 * expected);
}

TEST(Warmup, BoundaryIsFloorOfTenPercent) {
  EXPECT_EQ((WarmupSchedule{1000, 0.1}).boundary(), 100u);
  EXPECT_EQ((WarmupSchedule{55, 0.1}).boundary(), 5u);
  EXPECT_EQ((WarmupSchedule{9, 0.1}).boundary(), 0u);
  const WarmupSchedule s{100, 0.1};
  EXPECT_EQ(s.phase(9), WarmupPhase::uniform);
  EXPECT_EQ(s.phase(10), WarmupPhase::sensitivity);
}
