#include <gtest/gtest.h>

#include "oracles.hpp"
#include "selfdeblur/gradcheck.hpp"
#include "selfdeblur/ops.hpp"

using namespace selfdeblur;

TEST(Tape, SumGivesOnes) {
  Tape<double> t;
  Var<double> p = t.variable(Tensor<double>({3}, {1, 2, 3}));
  t.backward(sum(p));
  EXPECT_EQ(t.grad(p).vec(), (std::vector<double>{1, 1, 1}));
}

TEST(Tape, SumOfSquares) {
  Tape<double> t;
  Var<double> p = t.variable(Tensor<double>({2}, {1, -2}));
  t.backward(sum(square(p)));
  EXPECT_EQ(t.grad(p).vec(), (std::vector<double>{2, -4}));
}

TEST(Tape, FanOutAccumulates) {
  Tape<double> t;
  Var<double> p = t.variable(Tensor<double>({1}, {3}));
  // p + p^2 + p -> d/dp = 2 + 2p
  t.backward(sum(add(add(p, square(p)), p)));
  EXPECT_DOUBLE_EQ(t.grad(p)[0], 8.0);
}

TEST(Tape, ConstantsCollectNoGradient) {
  Tape<double> t;
  Var<double> c = t.constant(Tensor<double>({2}, 1.0));
  Var<double> v = t.variable(Tensor<double>({2}, 2.0));
  t.backward(sum(add(c, v)));
  EXPECT_TRUE(t.grad(c).empty());
  EXPECT_EQ(t.grad_slot(c.id), nullptr);
}

TEST(Tape, BackwardRejectsNonScalarAndForwardOnlyTapes) {
  Tape<double> t;
  Var<double> v = t.variable(Tensor<double>({2}, 1.0));
  EXPECT_THROW(t.backward(v), ContractViolation);
  Tape<double> f(false);
  Var<double> w = f.variable(Tensor<double>({1}, 1.0));
  EXPECT_THROW(f.backward(sum(w)), ContractViolation);
}

TEST(Tape, ForwardOnlyTapeRecordsNoClosures) {
  Tape<double> f(false);
  Var<double> w = f.variable(Tensor<double>({3}, 1.0));
  Var<double> s = sum(square(w));
  EXPECT_FALSE(f.requires_grad(s.id));
  EXPECT_EQ(s.value()[0], 3.0);
}

TEST(ParamStore, BindsGradientsAndZeroes) {
  ParamStore<double> store;
  store.add("w", Tensor<double>({2}, {1, 2}));
  EXPECT_THROW(store.add("w", Tensor<double>({1})), ContractViolation);
  for (int rep = 0; rep < 2; ++rep) {
    Tape<double> t;
    t.backward(sum(square(t.param(store, "w"))));
  }
  EXPECT_EQ(store.at("w").grad.vec(), (std::vector<double>{4, 8}));  // accumulated twice
  store.zero_grad();
  EXPECT_EQ(store.at("w").grad.vec(), (std::vector<double>{0, 0}));
}

TEST(ParamStore, FrozenParametersGetNoGradient) {
  ParamStore<double> store;
  store.add("w", Tensor<double>({2}, {1, 2}));
  Tape<double> t;
  Var<double> w = t.param(store, "w", false);
  Var<double> v = t.variable(Tensor<double>({2}, 1.0));
  t.backward(sum(add(w, v)));
  EXPECT_EQ(store.at("w").grad.vec(), (std::vector<double>{0, 0}));
}

TEST(Gradcheck, SigmoidAtZeroIsQuarter) {
  Tape<double> t;
  Var<double> x = t.variable(Tensor<double>({1}, 0.0));
  t.backward(sum(sigmoid(x)));
  EXPECT_NEAR(t.grad(x)[0], 0.25, 1e-15);
  const double err = gradcheck([](Tape<double>&, Var<double> v) { return sum(sigmoid(v)); },
                               Tensor<double>({1}, 0.0));
  EXPECT_LT(err, 1e-6);
}

TEST(Gradcheck, SoftmaxVectorJacobianProduct) {
  const auto point = oracle::random({5}, 3);
  const auto w = oracle::random({5}, 4);
  const double err = gradcheck([&](Tape<double>&, Var<double> v) { return dot_const(softmax(v), w); }, point);
  EXPECT_LT(err, 1e-6);
}

TEST(Gradcheck, ConvSumMatchesIndependentCentralDifferences) {
  const auto x = oracle::random({2, 5, 6}, 1);
  const auto w = oracle::random({3, 2, 3, 3}, 2);
  Tape<double> t;
  Var<double> xv = t.variable(x);
  t.backward(sum(conv2d(xv, t.constant(w))));
  const auto num = oracle::numeric_grad(
      [&](const Tensor<double>& p) { return oracle::conv2d(p, w, 1, false).sum(); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(relative_error(t.grad(xv)[i], num[i]), 1e-4) << i;
}

TEST(Gradcheck, DetectsAWrongGradient) {
  // A deliberately wrong backward: claims d/dx x^2 = x.
  auto bad = [](Tape<double>&, Var<double> x) {
    Tensor<double> out = x.value();
    for (auto& v : out.data()) v = v * v;
    Var<double> y = x.tape->push("bad_square", std::move(out), {x.id}, [=](Tape<double>& t, std::size_t self) {
      Tensor<double>& g = *t.grad_slot(x.id);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += t.grad(self)[i] * t.value(x.id)[i];
    });
    return sum(y);
  };
  EXPECT_GT(gradcheck(bad, oracle::random({4}, 9, 0.5, 1.0)), 0.4);
}

TEST(Gradcheck, RelativeErrorFloor) {
  EXPECT_DOUBLE_EQ(relative_error(2.0, 1.0), 0.5);
  EXPECT_DOUBLE_EQ(relative_error(1.0, -1.0), 2.0);
  EXPECT_LT(relative_error(1e-17, 4e-11), 1e-4);  // below central-difference resolution
}
