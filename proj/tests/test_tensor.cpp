#include <gtest/gtest.h>

#include "selfdeblur/rng.hpp"
#include "selfdeblur/tensor.hpp"

using namespace selfdeblur;

TEST(Tensor, ShapeAndIndexing) {
  Tensor<double> t({2, 3, 4});
  EXPECT_EQ(t.size(), 24u);
  EXPECT_EQ(t.rank(), 3u);
  t(1, 2, 3) = 5;
  EXPECT_EQ(t[23], 5);
  EXPECT_EQ(t.sum(), 5);
  EXPECT_EQ(shape_str(t.shape()), "[2x3x4]");
}

TEST(Tensor, RejectsZeroDimensionsAndBadData) {
  EXPECT_THROW(Tensor<double>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>(3)), DimensionError);
}

TEST(Tensor, ReshapeKeepsDataAndChecksCount) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(r(2, 1), 6);
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Tensor, CenterCropTakesTheMiddle) {
  Tensor<double> t({1, 4, 4});
  for (std::size_t i = 0; i < 16; ++i) t[i] = static_cast<double>(i);
  const auto c = center_crop(t, 2, 2);
  EXPECT_EQ(c.vec(), (std::vector<double>{5, 6, 9, 10}));
}

TEST(Rng, SameSeedSameStream) {
  Rng a(7), b(7), c(8);
  for (int i = 0; i < 100; ++i) {
    const double x = a.uniform();
    EXPECT_EQ(x, b.uniform());
    EXPECT_GE(x, 0.0);
    EXPECT_LT(x, 1.0);
  }
  EXPECT_NE(Rng(7).uniform(), c.uniform());
}

TEST(Rng, DerivedSeedsDiffer) {
  EXPECT_NE(derive_seed(0, 1), derive_seed(0, 2));
  EXPECT_NE(derive_seed(0, 1), derive_seed(1, 1));
  EXPECT_EQ(derive_seed(3, 4), derive_seed(3, 4));
}

TEST(Rng, NormalMoments) {
  Rng r(11);
  double s = 0, s2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal(1.0, 2.0);
    s += v;
    s2 += v * v;
  }
  const double mean = s / n, var = s2 / n - mean * mean;
  EXPECT_NEAR(mean, 1.0, 0.02);
  EXPECT_NEAR(var, 4.0, 0.06);
}

TEST(SampleZ, DeterministicAndInRange) {
  const auto a = sample_z<double>({8, 16, 16}, 42);
  const auto b = sample_z<double>({8, 16, 16}, 42);
  EXPECT_EQ(a, b);
  EXPECT_GE(a.min(), 0.0);
  EXPECT_LE(a.max(), 0.1);
}

TEST(SampleZ, MeanOfAMillionSamples) {
  const auto z = sample_z<double>({1000000}, 0);
  const double mean = z.sum() / 1e6;
  EXPECT_GE(mean, 0.0497);
  EXPECT_LE(mean, 0.0503);
}
