#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "dropbp/error.hpp"
#include "dropbp/tensor.hpp"

using dropbp::Tensor;

TEST(Tensor, ZeroFilledFromShape) {
  Tensor t({2, 3});
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rows(), 2u);
  EXPECT_EQ(t.cols(), 3u);
  for (double v : t.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(t.bytes(), 6 * sizeof(double));
}

TEST(Tensor, RowsLiteral) {
  Tensor t{{1, 2}, {3, 4}, {5, 6}};
  EXPECT_EQ(t.shape(), (dropbp::Shape{3, 2}));
  EXPECT_EQ(t.at(2, 1), 6.0);
  EXPECT_DOUBLE_EQ(t.l2_norm(), std::sqrt(91.0));
}

TEST(Tensor, RankOneIsOneRow) {
  Tensor t = Tensor::full({4}, 2.0);
  EXPECT_EQ(t.rows(), 1u);
  EXPECT_EQ(t.cols(), 4u);
}

TEST(Tensor, RejectsSizeMismatch) {
  EXPECT_THROW(Tensor({2, 2}, {1.0, 2.0, 3.0}), dropbp::DimensionError);
}

TEST(Tensor, RejectsNonFiniteData) {
  EXPECT_THROW(Tensor({1}, {std::numeric_limits<double>::quiet_NaN()}), dropbp::NumericError);
}

TEST(Tensor, EnsureFiniteNamesTheTensor) {
  Tensor t({2});
  t.values()[1] = std::numeric_limits<double>::infinity();
  EXPECT_FALSE(t.all_finite());
  try {
    t.ensure_finite("weights");
    FAIL();
  } catch (const dropbp::NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("weights"), std::string::npos);
  }
}

TEST(Tensor, ReshapeKeepsData) {
  Tensor t{{1, 2, 3}, {4, 5, 6}};
  Tensor r = t.reshaped({3, 2});
  EXPECT_EQ(r.at(1, 0), 3.0);
  EXPECT_THROW(t.reshaped({4, 2}), dropbp::DimensionError);
}

TEST(Tensor, ShapeString) { EXPECT_EQ(dropbp::shape_string({2, 3}), "[2x3]"); }
