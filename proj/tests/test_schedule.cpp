#include <gtest/gtest.h>

#include <cmath>

#include "csb/rng.hpp"
#include "csb/schedule.hpp"

using namespace csb;

TEST(Schedule, BetaAtLinear) {
  EXPECT_DOUBLE_EQ(NoiseSchedule(0.1, 0.1).beta_at(0.5), 0.1);
  EXPECT_DOUBLE_EQ(NoiseSchedule().beta_at(0.0), 0.1);
  EXPECT_NEAR(NoiseSchedule().beta_at(0.5), 10.05, 1e-12);
  EXPECT_THROW(NoiseSchedule().beta_at(1.5), DomainError);
  EXPECT_THROW(NoiseSchedule().beta_at(-0.1), DomainError);
}

TEST(Schedule, RejectsNonPositiveRates) {
  EXPECT_THROW(NoiseSchedule(0.0, 1.0), InvalidSchedule);
  EXPECT_THROW(NoiseSchedule(1.0, -2.0), InvalidSchedule);
}

TEST(Schedule, AccumulatedEndpoints) {
  const NoiseSchedule s;
  auto v0 = s.accumulated_variances(0.0);
  EXPECT_EQ(v0.sigma2, 0.0);
  EXPECT_NEAR(v0.sigma_bar2, s.total(), 1e-14);
  auto v1 = s.accumulated_variances(1.0);
  EXPECT_NEAR(v1.sigma2, s.total(), 1e-14);
  EXPECT_EQ(v1.sigma_bar2, 0.0);
  auto c = NoiseSchedule::constant(1.0).accumulated_variances(0.3);
  EXPECT_NEAR(c.sigma2, 0.3, 1e-15);
  EXPECT_NEAR(c.sigma_bar2, 0.7, 1e-15);
}

TEST(Schedule, BridgeCoefficientExamples) {
  const auto s = NoiseSchedule::constant(1.0);
  auto mid = s.bridge_coefficients(0.5);
  EXPECT_NEAR(mid.a, 0.5, 1e-15);
  EXPECT_NEAR(mid.b, 0.5, 1e-15);
  EXPECT_NEAR(mid.cap_sigma2, 0.25, 1e-15);
  auto q = s.bridge_coefficients(0.25);
  EXPECT_NEAR(q.a, 0.75, 1e-15);
  EXPECT_NEAR(q.b, 0.25, 1e-15);
  EXPECT_NEAR(q.cap_sigma2, 0.1875, 1e-15);
  auto lo = NoiseSchedule().bridge_coefficients(1e-9);
  EXPECT_NEAR(lo.a, 1.0, 1e-7);
  EXPECT_NEAR(lo.b, 0.0, 1e-7);
  EXPECT_NEAR(lo.cap_sigma2, 0.0, 1e-7);
}

TEST(Schedule, SumAndMonotonicityProperties) {
  const NoiseSchedule s;
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) {
    const double t = rng.uniform();
    const double u = rng.uniform();
    const auto v = s.accumulated_variances(t);
    EXPECT_NEAR((v.sigma2 + v.sigma_bar2) / s.total(), 1.0, 1e-12);
    const auto w = s.accumulated_variances(u);
    if (t <= u) {
      EXPECT_LE(v.sigma2, w.sigma2);
      EXPECT_GE(v.sigma_bar2, w.sigma_bar2);
    } else {
      EXPECT_GE(v.sigma2, w.sigma2);
      EXPECT_LE(v.sigma_bar2, w.sigma_bar2);
    }
    const auto c = s.bridge_coefficients(t);
    EXPECT_EQ(c.a + c.b, 1.0);
    EXPECT_GE(c.cap_sigma2, 0.0);
  }
}

TEST(Schedule, CapSigmaSymmetricUnderSwap) {
  // Reversing a linear schedule in time swaps sigma2 and sigma_bar2.
  const NoiseSchedule fwd(0.3, 7.0), rev(7.0, 0.3);
  for (double t : {0.05, 0.2, 0.5, 0.77, 0.93}) {
    EXPECT_NEAR(fwd.bridge_coefficients(t).cap_sigma2, rev.bridge_coefficients(1.0 - t).cap_sigma2, 1e-13);
  }
}

TEST(Schedule, CapSigmaVanishesAtBothEnds) {
  const NoiseSchedule s;
  EXPECT_LT(s.bridge_coefficients(1e-6).cap_sigma2, 1e-5 * s.total());
  EXPECT_LT(s.bridge_coefficients(1.0 - 1e-6).cap_sigma2, 1e-5 * s.total());
}

TEST(Schedule, RatesMatchFiniteDifferences) {
  const NoiseSchedule s;
  const double h = 1e-6;
  for (double t : {0.1, 0.4, 0.8}) {
    const auto r = s.bridge_coefficient_rates(t);
    const auto p = s.bridge_coefficients(t + h), m = s.bridge_coefficients(t - h);
    EXPECT_NEAR(r.a, (p.a - m.a) / (2 * h), 1e-6);
    EXPECT_NEAR(r.b, (p.b - m.b) / (2 * h), 1e-6);
    EXPECT_NEAR(r.cap_sigma2, (p.cap_sigma2 - m.cap_sigma2) / (2 * h), 1e-6);
  }
}

TEST(TimeGridTest, DefaultGrid) {
  const auto g = make_grid(120, 0.001, 0.999);
  ASSERT_EQ(g.nodes().size(), 121u);
  EXPECT_EQ(g[0], 0.001);
  EXPECT_EQ(g[120], 0.999);
  for (std::size_t i = 1; i < g.nodes().size(); ++i) EXPECT_LT(g[i - 1], g[i]);
}

TEST(TimeGridTest, SingleStepAndBounds) {
  const auto g = make_grid(1, 0.001, 0.999);
  ASSERT_EQ(g.nodes().size(), 2u);
  EXPECT_EQ(g[0], 0.001);
  EXPECT_EQ(g[1], 0.999);
  EXPECT_THROW(make_grid(4, 0.0, 1.0), DomainError);
  EXPECT_THROW(make_grid(0, 0.1, 0.9), DomainError);
  EXPECT_THROW(make_grid(4, 0.5, 0.4), DomainError);
}
