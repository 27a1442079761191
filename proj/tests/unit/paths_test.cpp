#include <gtest/gtest.h>

#include <cmath>

#include "dropbp/error.hpp"
#include "dropbp/paths.hpp"
#include "dropbp/submodules.hpp"
#include "helpers.hpp"

using namespace dropbp;

namespace {

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace

TEST(Paths, LinearNetSumOverPathsIsFullGradient) {
  for (std::size_t n : {1u, 2u, 3u, 4u}) {
    Rng rng(n);
    auto net = LinearResidualNet::scaled_orthogonal(n, 5, 3, 0.7, rng);
    const Tensor full = net.input_gradient(std::vector<Route>(n, Route::both));
    EXPECT_LT(max_abs_diff(sum_over_paths(net), full), 1e-10);
  }
}

TEST(Paths, ScaledOrthogonalNormsDecayGeometrically) {
  Rng rng(9);
  auto net = LinearResidualNet::scaled_orthogonal(4, 6, 2, 0.5, rng);
  Rng pick(10);
  const auto report = path_gradient_analysis(net, {0, 1, 2, 3, 4}, 5, pick);
  const double base = report.rows[0].mean_norm;
  for (const auto& row : report.rows) {
    EXPECT_NEAR(row.mean_norm, base * std::pow(0.5, static_cast<double>(row.k)), 1e-12 * base);
  }
  for (std::size_t i = 1; i < report.rows.size(); ++i) {
    EXPECT_LT(report.rows[i].mean_norm, report.rows[i - 1].mean_norm);
  }
  EXPECT_EQ(report.samples.size(), 25u);
}

TEST(Paths, WeightsSumToOneExactly) {
  for (unsigned n : {1u, 3u, 8u, 24u}) {
    BigRational sum = 0;
    for (const auto& w : binomial_weights(n)) sum += w;
    EXPECT_EQ(sum, BigRational(1));
  }
}

TEST(Paths, ModelSumOverPathsIsFullGradient) {
  // Jacobians are taken at a fixed forward pass, so the expansion is exact
  // for the nonlinear model as well.
  Rng rng(11);
  Model m(dropbp::testing::tiny_config(), rng);
  dropbp::testing::randomize(m, 0.3, 12);
  ModelPathProbe probe(m, dropbp::testing::random_batch(2, 5, 11, 13));
  const Tensor full = probe.input_gradient(std::vector<Route>(4, Route::both));
  const Tensor sum = sum_over_paths(probe);
  EXPECT_LT(max_abs_diff(sum, full), 1e-12 * (1.0 + full.l2_norm()));
}

TEST(Paths, EmptyPathIsIdentityGradient) {
  Rng rng(14);
  Model m(dropbp::testing::tiny_config(), rng);
  ModelPathProbe probe(m, dropbp::testing::random_batch(2, 5, 11, 15));
  Rng pick(16);
  const auto report = path_gradient_analysis(probe, {0}, 3, pick);
  const double n0 = probe.input_gradient(path_routes({false, false, false, false})).l2_norm();
  EXPECT_DOUBLE_EQ(report.rows[0].mean_norm, n0);
  EXPECT_DOUBLE_EQ(report.rows[0].weight, 1.0 / 16.0);
}

TEST(Paths, RejectsBadArguments) {
  Rng rng(17);
  auto net = LinearResidualNet::scaled_orthogonal(3, 4, 2, 0.5, rng);
  EXPECT_THROW(path_gradient_analysis(net, {4}, 1, rng), ArgumentError);
  EXPECT_THROW(path_gradient_analysis(net, {1}, 0, rng), ArgumentError);
  EXPECT_THROW(net.input_gradient({Route::both}), DimensionError);
}
