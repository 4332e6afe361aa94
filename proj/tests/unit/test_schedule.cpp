#include <gtest/gtest.h>

#include <cmath>

#include "tarec/error.hpp"
#include "tarec/rng.hpp"
#include "tarec/schedule.hpp"

using namespace tarec;

TEST(Schedule, SingleStep) {
  auto s = NoiseSchedule::linear(1, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 1);
  EXPECT_DOUBLE_EQ(s.beta(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 1.0 - 1e-4);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, TwoStepHandProduct) {
  auto s = NoiseSchedule::linear(2, 0.1, 0.3);
  EXPECT_NEAR(s.alpha_bar(2), 0.9 * 0.7, 1e-15);
}

TEST(Schedule, RecurrenceAndMonotone) {
  auto s = NoiseSchedule::linear(1000);
  long double product = 1.0L;
  for (int t = 1; t <= 1000; ++t) {
    product *= 1.0L - static_cast<long double>(s.beta(t));
    EXPECT_NEAR(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t), 1e-12);
    EXPECT_NEAR(s.alpha_bar(t), static_cast<double>(product), 1e-12);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
  }
  EXPECT_LT(s.alpha_bar(1000), s.alpha_bar(1));
  EXPECT_DOUBLE_EQ(s.beta(1000), 0.02);
  EXPECT_EQ(s.tilde_beta(1), 0.0);
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(NoiseSchedule::linear(0), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.03, 0.02), ConfigError);
  EXPECT_THROW(NoiseSchedule::linear(10, 0.1, 1.0), ConfigError);
  auto s = NoiseSchedule::linear(10);
  EXPECT_THROW(s.alpha_bar(11), ContractViolation);
  EXPECT_THROW(s.beta(0), ContractViolation);
}

TEST(Schedule, FractionalAlphaBar) {
  auto s = NoiseSchedule::linear(10);
  for (int t = 0; t <= 10; ++t) EXPECT_EQ(s.alpha_bar_at(t), s.alpha_bar(t));
  const double mid = s.alpha_bar_at(4.5);
  EXPECT_NEAR(mid, std::sqrt(s.alpha_bar(4) * s.alpha_bar(5)), 1e-15);
  EXPECT_THROW(s.alpha_bar_at(10.5), ContractViolation);
}

TEST(ForwardDiffuse, Examples) {
  auto s = NoiseSchedule::linear(100);
  Matrix x = Matrix::row({0.3, -1.2, 2.0});
  Matrix z = Matrix::row({1.0, 0.5, -0.7});
  EXPECT_EQ(forward_diffuse(x, 0, z, s), x);

  auto full = forward_diffuse(x, 100, z, s);
  const double bound = std::sqrt(s.alpha_bar(100)) * norm(x.row_span(0));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_NEAR(full[i], z[i] * std::sqrt(1 - s.alpha_bar(100)), bound + 1e-15);
  }
}

TEST(ForwardDiffuse, PlugIn) {
  // A single step with beta = 0.36 has alpha_bar_1 = 0.64.
  auto s = NoiseSchedule::linear(1, 0.36, 0.36);
  auto out = forward_diffuse(Matrix::row({1.0, 0.0}), 1, Matrix::row({0.0, 1.0}), s);
  EXPECT_NEAR(out[0], 0.8, 1e-15);
  EXPECT_NEAR(out[1], 0.6, 1e-15);
}

TEST(ForwardDiffuse, ResidualIsZeroPerRow) {
  auto s = NoiseSchedule::linear(50);
  Rng rng(5);
  Matrix x = gaussian(8, 6, rng);
  Matrix z = gaussian(8, 6, rng);
  std::vector<int> t = {1, 3, 7, 10, 20, 30, 49, 50};
  auto out = forward_diffuse(x, t, z, s);
  for (std::size_t r = 0; r < 8; ++r) {
    const long double a = std::sqrt(static_cast<long double>(s.alpha_bar(t[r])));
    const long double b = std::sqrt(1.0L - static_cast<long double>(s.alpha_bar(t[r])));
    for (std::size_t c = 0; c < 6; ++c) {
      const long double residual = static_cast<long double>(out(r, c)) - a * x(r, c) - b * z(r, c);
      EXPECT_LT(std::fabs(static_cast<double>(residual)), 1e-15);
    }
  }
}

TEST(ReverseStep, CoefficientSumMatchesDirectEvaluation) {
  auto s = NoiseSchedule::linear(10);
  for (int t = 1; t <= 10; ++t) {
    auto c = reverse_coefficients(s, t);
    const double ab = s.alpha_bar(t);
    const double ab_prev = s.alpha_bar(t - 1);
    const double expect =
        (std::sqrt(ab_prev) * s.beta(t) + std::sqrt(s.alpha(t)) * (1 - ab_prev)) / (1 - ab);
    EXPECT_NEAR(c.c_x0 + c.c_xt, expect, 1e-12);
    EXPECT_NEAR(c.sigma * c.sigma, s.tilde_beta(t), 1e-15);
  }
}

TEST(ReverseStep, AtStepOneReturnsPrediction) {
  auto s = NoiseSchedule::linear(10);
  Rng rng(2);
  Matrix x0 = gaussian(3, 4, rng);
  Matrix xt = gaussian(3, 4, rng);
  auto out = reverse_step(x0, xt, 1, nullptr, s);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(out[i], x0[i], 1e-12);
  Matrix z = gaussian(3, 4, rng);
  auto noisy = reverse_step(x0, xt, 1, &z, s);
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(noisy[i], x0[i], 1e-12);
}

TEST(ReverseStep, JumpToCleanIsExactIdentity) {
  auto c = reverse_coefficients(0.37, 1.0);
  EXPECT_EQ(c.c_x0, 1.0);
  EXPECT_EQ(c.c_xt, 0.0);
  EXPECT_EQ(c.sigma, 0.0);
}

TEST(ReverseStep, JumpMatchesAdjacentStep) {
  auto s = NoiseSchedule::linear(20);
  for (int t = 2; t <= 20; ++t) {
    auto a = reverse_coefficients(s, t);
    auto b = reverse_coefficients(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_NEAR(a.c_x0, b.c_x0, 1e-12);
    EXPECT_NEAR(a.c_xt, b.c_xt, 1e-12);
    EXPECT_NEAR(a.sigma, b.sigma, 1e-12);
  }
}

TEST(ReverseStep, ParallelInputsStayParallel) {
  auto s = NoiseSchedule::linear(30);
  Matrix v = Matrix::row({1.0, -2.0, 0.5});
  for (int t : {1, 2, 15, 30}) {
    auto out = reverse_step(v, v, t, nullptr, s);
    const double k = out[0] / v[0];
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(out[i], k * v[i], 1e-14);
  }
}

TEST(ReverseStep, RejectsStepZero) {
  auto s = NoiseSchedule::linear(5);
  Matrix v = Matrix::row({1.0});
  EXPECT_THROW(reverse_step(v, v, 0, nullptr, s), ContractViolation);
}
