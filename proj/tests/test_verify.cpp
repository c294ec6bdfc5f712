#include <gtest/gtest.h>

#include "oracles.hpp"
#include "selfdeblur/verify.hpp"

using namespace selfdeblur;

TEST(Verify, BruteForceOracleAgreesWithIndependentLoops) {
  const auto x = oracle::random({2, 7, 6}, 1);
  const auto w = oracle::random({3, 2, 2, 3}, 2);
  for (std::size_t s : {1u, 2u}) {
    const auto a = verify::conv2d_bruteforce(x, w, s);
    const auto b = oracle::conv2d(x, w, s, false);
    ASSERT_EQ(a.shape(), b.shape());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  }
}

TEST(Verify, AllSuitesPass) {
  verify::Options opt;
  opt.simplex_draws = 500;
  for (const auto& name : verify::suite_names()) {
    const auto r = verify::run_suite(name, opt);
    EXPECT_TRUE(r.passed) << name << ": " << r.detail;
  }
}

TEST(Verify, InjectedSignErrorFailsGradcheck) {
  verify::Options opt;
  opt.inject_gradient_fault = true;
  const auto r = verify::run_suite("gradcheck", opt);
  EXPECT_FALSE(r.passed);
  EXPECT_NE(r.detail.find("sigmoid"), std::string::npos);
}

TEST(Verify, UnknownSuiteIsAConfigError) {
  EXPECT_THROW(verify::run_suite("nope", {}), ConfigError);
}
