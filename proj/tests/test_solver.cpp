#include <gtest/gtest.h>

#include "selfdeblur/data.hpp"
#include "selfdeblur/metrics.hpp"
#include "selfdeblur/solver.hpp"

using namespace selfdeblur;

namespace {

// Small noiseless instance: scene of (16+K-1)^2 blurred by k to 16x16.
DatasetPair<float> tiny_pair(const Tensor<float>& k, std::uint64_t seed) {
  const std::size_t K = k.dim(0);
  return synth_blur(synthetic_scene<float>(16 + K - 1, 16 + K - 1, seed), k, 0.0, seed);
}

RunConfig tiny_config(std::size_t K, int iters) {
  RunConfig c = RunConfig::desk(1, K);
  c.set_iters(iters);
  c.lambda = 1e-6;
  return c;
}

}  // namespace

TEST(Schedule, PaperMilestones) {
  const RunConfig c = RunConfig::paper(1, 7);
  EXPECT_EQ(c.iters, 5000);
  EXPECT_DOUBLE_EQ(lr_at(1, c), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(1999, c), 0.01);
  EXPECT_DOUBLE_EQ(lr_at(2000, c), 0.005);
  EXPECT_DOUBLE_EQ(lr_at(2500, c), 0.005);
  EXPECT_DOUBLE_EQ(lr_at(3000, c), 0.0025);
  EXPECT_DOUBLE_EQ(lr_at(4500, c), 0.00125);
  EXPECT_EQ(c.snapshot_iters, (std::vector<int>{1, 20, 100, 600, 2000, 5000}));
}

TEST(Schedule, DeskAndCustomLengthsKeepProportions) {
  const RunConfig d = RunConfig::desk(1, 7);
  EXPECT_EQ(d.iters, 1500);
  EXPECT_EQ(d.milestones, (std::vector<int>{600, 900, 1200}));
  RunConfig c = RunConfig::paper(1, 7);
  c.set_iters(100);
  EXPECT_EQ(c.milestones, (std::vector<int>{40, 60, 80}));
  EXPECT_EQ(c.snapshot_iters, (std::vector<int>{1, 20, 100}));
  c.set_iters(2);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ValidationRejectsBadValues) {
  RunConfig c = RunConfig::desk(1, 7);
  c.milestones = {900, 600};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk(1, 7);
  c.snapshot_iters = {2000};
  EXPECT_THROW(c.validate(), ConfigError);
  c = RunConfig::desk(1, 6);
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_EQ(parse_mode("fixed-kernel"), Mode::fixed_kernel);
  EXPECT_THROW(parse_mode("both"), ConfigError);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ParamStore<double> p;
  p.add("w", Tensor<double>({3}, {1, -2, 3}));
  AdamState<double> st;
  adam_step(p, st, 0.1);
  EXPECT_EQ(p.at("w").value.vec(), (std::vector<double>{1, -2, 3}));
}

TEST(Adam, FirstStepMovesByLearningRate) {
  ParamStore<double> p;
  p.add("w", Tensor<double>({3}, 0.0));
  p.at("w").grad = Tensor<double>({3}, {5.0, -0.01, 300.0});
  AdamState<double> st;
  adam_step(p, st, 0.01);
  // Bias-corrected moments are g and g^2, so the step is lr * g / (|g| + eps).
  const double g[3] = {5.0, -0.01, 300.0};
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p.at("w").value[i], -0.01 * g[i] / (std::abs(g[i]) + 1e-8), 1e-15);
}

TEST(Adam, TwoStepsWithConstantGradient) {
  // Hand-rolled recurrence: with g = 1 both bias-corrected moments are 1, so
  // each step is lr / (1 + eps).
  ParamStore<double> p;
  p.add("w", Tensor<double>({1}, 0.0));
  AdamState<double> st;
  for (int i = 0; i < 2; ++i) {
    p.at("w").grad = Tensor<double>({1}, 1.0);
    adam_step(p, st, 0.1);
  }
  EXPECT_NEAR(p.at("w").value[0], -0.2, 1e-6);
}

TEST(Adam, NonFiniteGradientAbortsUntouched) {
  ParamStore<double> p;
  p.add("a", Tensor<double>({1}, 1.0));
  p.add("b", Tensor<double>({1}, 1.0));
  p.at("a").grad[0] = 1.0;
  p.at("b").grad[0] = std::nan("");
  AdamState<double> st;
  EXPECT_THROW(adam_step(p, st, 0.1), DivergenceError);
  EXPECT_EQ(p.at("a").value[0], 1.0);
}

TEST(RunJoint, FitsATinyNoiselessInstance) {
  const auto pair = tiny_pair(delta_kernel<float>(3), 1);
  const auto r = deblur<float>(pair.y, tiny_config(3, 500));
  EXPECT_EQ(r.curve.size(), 500u);
  EXPECT_EQ(r.gradient_evaluations, 500);
  EXPECT_LT(r.final_loss.fidelity, 1e-3);
  EXPECT_FALSE(r.diverged);
  EXPECT_TRUE(r.kernel.all_finite());
  EXPECT_NEAR(r.kernel.sum(), 1.0, 1e-5);
}

TEST(RunJoint, DeterministicCurvesAndSnapshots) {
  const auto pair = tiny_pair(delta_kernel<float>(3), 2);
  RunConfig c = tiny_config(3, 100);
  c.snapshot_iters = {1, 20, 100};
  const auto a = deblur<float>(pair.y, c);
  const auto b = deblur<float>(pair.y, c);
  ASSERT_EQ(a.curve.size(), b.curve.size());
  for (std::size_t i = 0; i < a.curve.size(); ++i) {
    EXPECT_EQ(a.curve[i].total, b.curve[i].total);
    EXPECT_EQ(a.curve[i].total, a.curve[i].fidelity + a.curve[i].lambda * a.curve[i].tv);
  }
  EXPECT_EQ(a.kernel, b.kernel);
  EXPECT_EQ(a.image, b.image);
  ASSERT_EQ(a.snapshots.size(), 3u);
  EXPECT_EQ(a.snapshots[0].iter, 1);
  EXPECT_EQ(a.snapshots[1].iter, 20);
  EXPECT_EQ(a.snapshots[2].iter, 100);
  EXPECT_EQ(a.snapshots[2].kernel, a.kernel);
  RunConfig other = c;
  other.seed = 1;
  EXPECT_NE(deblur<float>(pair.y, other).curve.back().total, a.curve.back().total);
}

TEST(RunAlternating, TwoEvaluationsPerIterationAndDeterministic) {
  const auto pair = tiny_pair(delta_kernel<float>(3), 3);
  RunConfig c = tiny_config(3, 30);
  c.mode = Mode::alternating;
  const auto a = deblur<float>(pair.y, c);
  const auto b = deblur<float>(pair.y, c);
  EXPECT_EQ(a.mode, Mode::alternating);
  EXPECT_EQ(a.gradient_evaluations, 60);
  EXPECT_EQ(a.curve.size(), 30u);
  EXPECT_EQ(a.kernel, b.kernel);
  EXPECT_EQ(a.curve.back().total, b.curve.back().total);
}

TEST(RunAlternating, FrozenNetworkCollectsNoGradient) {
  ImageGenerator<float> gx(GxConfig::desk(1), 18, 18, 1);
  KernelGenerator<float> gk(GkConfig{200, 32, 3}, 2);
  const auto zx = sample_z<float>(gx.input_shape(), 3);
  const auto zk = sample_z<float>(gk.input_shape(), 4);
  const Tensor<float> y({1, 16, 16}, 0.5f);
  for (bool kernel_step : {true, false}) {
    gx.params().zero_grad();
    gk.params().zero_grad();
    Tape<float> t;
    auto obj = selfdeblur_loss(gx.forward(t, t.constant(zx), !kernel_step),
                               gk.forward(t, t.constant(zk), kernel_step), y, 1e-3);
    t.backward(obj.total);
    auto& frozen = kernel_step ? gx.params() : gk.params();
    auto& live = kernel_step ? gk.params() : gx.params();
    for (const auto& [_, p] : frozen)
      for (float g : p.grad.data()) ASSERT_EQ(g, 0.0f);
    double mass = 0;
    for (const auto& [_, p] : live)
      for (float g : p.grad.data()) mass += std::abs(g);
    EXPECT_GT(mass, 0.0);
  }
}

TEST(RunFixedKernel, KnownKernelBeatsTheBlurryInput) {
  SynthSpec s;
  s.kernel_size = 5;
  s.seed = 4;
  const auto k = gen_kernel_randomwalk<float>(s);
  const auto pair = tiny_pair(k, 4);
  RunConfig c = tiny_config(5, 500);
  c.mode = Mode::fixed_kernel;
  const auto r = deblur<float>(pair.y, c, k);
  EXPECT_EQ(r.mode, Mode::fixed_kernel);
  EXPECT_EQ(r.kernel, k);
  const auto x_crop = center_crop(pair.x_gt, 16, 16);
  EXPECT_GT(psnr(center_crop(r.image, 16, 16), x_crop), psnr(pair.y, x_crop));
}

TEST(RunFixedKernel, DeltaOnSharpInputFits) {
  const auto x = synthetic_scene<float>(18, 18, 5);
  const auto y = center_crop(x, 16, 16);
  RunConfig c = tiny_config(3, 500);
  c.mode = Mode::fixed_kernel;
  const auto r = deblur<float>(y, c, delta_kernel<float>(3));
  EXPECT_LT(r.final_loss.fidelity, 1e-3);
}

TEST(RunFixedKernel, RejectsKernelsOffTheSimplex) {
  Tensor<float> k({3, 3}, 0.2f);
  RunConfig c = tiny_config(3, 5);
  c.mode = Mode::fixed_kernel;
  EXPECT_THROW(deblur<float>(Tensor<float>({1, 16, 16}, 0.5f), c, k), ContractViolation);
  EXPECT_THROW(deblur<float>(Tensor<float>({1, 16, 16}, 0.5f), c), ConfigError);
}

TEST(Run, OverflowingWeightIsReportedAsDivergence) {
  RunConfig c = tiny_config(3, 10);
  c.lambda = 1e39;  // overflows single precision
  const auto y = center_crop(synthetic_scene<float>(18, 18, 6), 16, 16);
  const auto r = deblur<float>(y, c);
  EXPECT_TRUE(r.diverged);
  EXPECT_FALSE(r.diagnostic.empty());
  EXPECT_LT(r.curve.size(), 10u);
}
