#include <gtest/gtest.h>

#include "oracles.hpp"
#include "selfdeblur/data.hpp"
#include "selfdeblur/metrics.hpp"

using namespace selfdeblur;

namespace {

Tensor<double> smooth_random(std::size_t H, std::size_t W, std::uint64_t seed) {
  return synthetic_scene<double>(H, W, seed);
}

}  // namespace

TEST(AlignShift, IdentityAndConstructedShifts) {
  const auto ref = smooth_random(24, 24, 1);
  EXPECT_EQ(align_shift(ref, ref, 3), (Shift{0, 0}));
  // est is ref moved down one row; moving it back up is (-1, 0).
  EXPECT_EQ(align_shift(shift_image(ref, {1, 0}), ref, 3), (Shift{-1, 0}));
}

TEST(AlignShift, RecoversShiftUnderNoise) {
  const auto ref = smooth_random(32, 32, 2);
  auto est = shift_image(ref, {2, -1});
  Rng rng(3);
  for (auto& v : est.data()) v += rng.normal(0, 1e-3);
  EXPECT_EQ(align_shift(est, ref, 3), (Shift{-2, 1}));
}

TEST(ShiftCandidates, OrderedBySize) {
  const auto c = shift_candidates(1);
  ASSERT_EQ(c.size(), 9u);
  EXPECT_EQ(c[0], (Shift{0, 0}));
  for (std::size_t i = 1; i < 5; ++i) EXPECT_EQ(std::abs(c[i].dy) + std::abs(c[i].dx), 1);
}

TEST(Psnr, Anchors) {
  const auto ref = oracle::random({1, 16, 16}, 4, 0.2, 0.8);
  EXPECT_EQ(psnr(ref, ref), kPsnrCeiling);
  Tensor<double> est = ref;
  for (auto& v : est.data()) v += 0.1;
  EXPECT_NEAR(psnr(est, ref), 20.0, 1e-9);
}

TEST(Psnr, AlignmentUndoesAOnePixelShift) {
  const auto ref = smooth_random(20, 20, 5);
  const auto est = shift_image(ref, {1, 0});
  EXPECT_EQ(psnr(est, ref, true, 1), kPsnrCeiling);
  EXPECT_LT(psnr(est, ref, false, 1), 60.0);
}

TEST(Psnr, AlignmentNeverLowersTheScore) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const auto ref = smooth_random(20, 20, s);
    auto est = oracle::random({1, 20, 20}, s + 100, 0, 1);
    for (std::size_t i = 0; i < est.size(); ++i) est[i] = 0.7 * ref[i] + 0.3 * est[i];
    EXPECT_GE(psnr(est, ref, true, 3), psnr(est, ref, false, 3));
  }
}

TEST(Psnr, MatchesDirectFormulaOnCrop) {
  const auto ref = oracle::random({2, 12, 10}, 6);
  const auto est = oracle::random({2, 12, 10}, 7);
  double sse = 0;
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 2; i < 10; ++i)
      for (std::size_t j = 2; j < 8; ++j) sse += std::pow(est(c, i, j) - ref(c, i, j), 2);
  EXPECT_NEAR(psnr(est, ref, false, 2), 10 * std::log10(1.0 / (sse / (2 * 8 * 6))), 1e-10);
  EXPECT_NEAR(ssd(est, ref, false, 2), sse, 1e-10);
}

TEST(Ssim, IdenticalIsOne) {
  const auto a = smooth_random(24, 24, 8);
  EXPECT_NEAR(ssim(a, a), 1.0, 1e-12);
}

TEST(Ssim, InvertedCheckerboardIsNegative) {
  Tensor<double> a({1, 16, 16});
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) a(0, i, j) = (i + j) % 2;
  Tensor<double> b = a;
  for (auto& v : b.data()) v = 1 - v;
  const double s = ssim(b, a);
  EXPECT_LT(s, 0.0);
  EXPECT_NEAR(s, oracle::ssim(b, a), 1e-12);
}

TEST(Ssim, SymmetricAndMatchesWindowOracle) {
  const auto a = oracle::random({2, 20, 18}, 9, 0, 1);
  auto b = smooth_random(20, 18, 10);
  Tensor<double> b2({2, 20, 18});
  for (std::size_t i = 0; i < b2.size(); ++i) b2[i] = 0.5 * b[i % b.size()] + 0.5 * a[i];
  EXPECT_NEAR(ssim(a, b2), ssim(b2, a), 1e-12);
  EXPECT_NEAR(ssim(a, b2), oracle::ssim(a, b2), 1e-12);
  EXPECT_THROW(ssim(Tensor<double>({1, 8, 8}), Tensor<double>({1, 8, 8})), ContractViolation);
}

TEST(KernelMse, Anchors) {
  const auto k = oracle::random_simplex(5, 11);
  EXPECT_EQ(kernel_mse_aligned(k, k), 0.0);
  Tensor<double> delta({3, 3}), uniform({3, 3}, 1.0 / 9.0);
  delta(1, 1) = 1;
  EXPECT_NEAR(kernel_mse_aligned(delta, uniform), 72.0 / 729.0, 1e-15);
}

TEST(KernelMse, OnePixelShiftAlignsToZero) {
  Tensor<double> k({7, 7});
  k(2, 3) = 0.5;
  k(3, 3) = 0.3;
  k(3, 4) = 0.2;
  const auto shifted = shift_image(k.reshaped({1, 7, 7}), {1, 0}).reshaped({7, 7});
  Shift used;
  EXPECT_EQ(kernel_mse_aligned(shifted, k, &used), 0.0);
  EXPECT_EQ(used, (Shift{-1, 0}));
}

TEST(KernelMse, InvariantToCommonShift) {
  SynthSpec s;
  s.walk_steps = 3;
  s.step_std = 0.5;
  s.kernel_size = 9;
  Tensor<double> a = gen_kernel_randomwalk<double>(s);
  s.seed = 1;
  Tensor<double> b = gen_kernel_randomwalk<double>(s);
  const double base = kernel_mse_aligned(a, b);
  for (Shift sh : {Shift{1, 0}, Shift{-1, 1}, Shift{0, -1}}) {
    const auto as = shift_image(a.reshaped({1, 9, 9}), sh).reshaped({9, 9});
    const auto bs = shift_image(b.reshaped({1, 9, 9}), sh).reshaped({9, 9});
    ASSERT_NEAR(as.sum(), 1.0, 1e-12);  // support stays inside the grid
    EXPECT_NEAR(kernel_mse_aligned(as, bs), base, 1e-15);
  }
}

TEST(KernelMse, PadsSmallerKernel) {
  Tensor<double> d3({3, 3}), d5({5, 5});
  d3(1, 1) = 1;
  d5(2, 2) = 1;
  EXPECT_EQ(kernel_mse_aligned(d3, d5), 0.0);
}

TEST(EvaluateImage, IdenticalImages) {
  const auto a = smooth_random(30, 30, 12);
  const auto r = evaluate_image(a, a, 7);
  EXPECT_EQ(r.psnr, kPsnrCeiling);
  EXPECT_NEAR(r.ssim, 1.0, 1e-12);
  EXPECT_EQ(r.shift, (Shift{0, 0}));
  EXPECT_THROW(evaluate_image(a, smooth_random(30, 29, 1), 7), DimensionError);
}

TEST(ErrorRatio, KnownKernelIsExactlyOneAndDeltaIsWorse) {
  SynthSpec s;
  s.kernel_size = 5;
  s.walk_steps = 12;
  s.step_std = 1.0;
  s.seed = 2;
  const auto k = gen_kernel_randomwalk<float>(s);
  const auto pair = synth_blur(synthetic_scene<float>(28, 28, 2), k, 0.0, 2);
  RunConfig c = RunConfig::desk(1, 5);
  c.set_iters(300);
  c.lambda = 1e-6;
  EXPECT_EQ(error_ratio(pair.y, k, k, pair.x_gt, c), 1.0);
  EXPECT_GT(error_ratio(pair.y, delta_kernel<float>(5), k, pair.x_gt, c), 1.0);
}
