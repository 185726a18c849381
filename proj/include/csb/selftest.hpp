#pragma once

// Bridge and schedule invariant checks. The CLI runs them at modest sizes;
// the acceptance suite calls the same functions with larger budgets.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "csb/bridge.hpp"
#include "csb/rng.hpp"
#include "csb/schedule.hpp"

namespace csb {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

namespace detail {

inline Endpoints random_endpoints(Rng& rng, std::size_t dim) {
  return Endpoints(rng.normal_vec(dim), rng.normal_vec(dim));
}

inline double random_time(Rng& rng, const TimeGrid& grid) {
  return grid.t_min() + (grid.t_max() - grid.t_min()) * rng.uniform();
}

}  // namespace detail

/// Composite Simpson integral of beta against the closed-form sigma^2 and
/// sigma_bar^2 at random times.
inline CheckResult check_schedule_closed_form(const NoiseSchedule& sched, Rng& rng, std::size_t n_times = 32) {
  double worst = 0.0;
  auto simpson = [&](double a, double b) {
    const std::size_t n = 2000;
    const double h = (b - a) / n;
    double s = sched.beta_at(a) + sched.beta_at(b);
    for (std::size_t i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * sched.beta_at(a + h * i);
    return s * h / 3.0;
  };
  for (std::size_t i = 0; i < n_times; ++i) {
    const double t = rng.uniform();
    const auto v = sched.accumulated_variances(t);
    worst = std::max(worst, std::abs(v.sigma2 - simpson(0.0, t)));
    worst = std::max(worst, std::abs(v.sigma_bar2 - simpson(t, 1.0)));
  }
  return {"schedule_closed_form", worst <= 1e-9, worst, 1e-9, "max |closed form - Simpson quadrature|"};
}

/// The bridge mean reaches x0 at t -> 0 and x1 at t -> 1 while cap_sigma2 vanishes.
inline CheckResult check_pinning(const NoiseSchedule& sched, Rng& rng, std::size_t dim = 8) {
  const auto ep = detail::random_endpoints(rng, dim);
  constexpr double tiny = 1e-10;
  const Vec lo = bridge_mean(ep, tiny, sched);
  const Vec hi = bridge_mean(ep, 1.0 - tiny, sched);
  double worst = 0.0;
  for (std::size_t i = 0; i < dim; ++i) {
    worst = std::max(worst, std::abs(lo[i] - ep.x0[i]));
    worst = std::max(worst, std::abs(hi[i] - ep.x1[i]));
  }
  worst = std::max(worst, sched.bridge_coefficients(tiny).cap_sigma2);
  worst = std::max(worst, sched.bridge_coefficients(1.0 - tiny).cap_sigma2);
  return {"pinning", worst <= 1e-6, worst, 1e-6, "max endpoint deviation of mean and variance"};
}

/// Monte-Carlo mean and variance of sample_posterior against (mu_t, cap_sigma2 I).
/// The value is the largest |z-score| over every coordinate and time.
inline CheckResult check_moments(const NoiseSchedule& sched, const TimeGrid& grid, Rng& rng, std::size_t dim,
                                 std::size_t n_times, std::size_t draws, double n_se = 4.0) {
  const auto ep = detail::random_endpoints(rng, dim);
  double worst = 0.0;
  for (std::size_t k = 0; k < n_times; ++k) {
    const double t = detail::random_time(rng, grid);
    const Vec mu = bridge_mean(ep, t, sched);
    const double var = sched.bridge_coefficients(t).cap_sigma2;
    Vec sum(dim, 0.0), sum2(dim, 0.0);
    for (std::size_t d = 0; d < draws; ++d) {
      const auto s = sample_posterior(ep, t, sched, rng.normal_vec(dim));
      for (std::size_t i = 0; i < dim; ++i) {
        const double c = s.x[i] - mu[i];
        sum[i] += c;
        sum2[i] += c * c;
      }
    }
    const double n = static_cast<double>(draws);
    for (std::size_t i = 0; i < dim; ++i) {
      const double mean_dev = sum[i] / n;
      const double sample_var = (sum2[i] - n * mean_dev * mean_dev) / (n - 1.0);
      worst = std::max(worst, std::abs(mean_dev) / std::sqrt(var / n));
      worst = std::max(worst, std::abs(sample_var - var) / (var * std::sqrt(2.0 / (n - 1.0))));
    }
  }
  return {"moments", worst <= n_se, worst, n_se, "max |z| of sample mean and variance"};
}

/// analytic_posterior_score against central differences of the Gaussian log-density.
inline CheckResult check_score_oracle(const NoiseSchedule& sched, const TimeGrid& grid, Rng& rng,
                                      std::size_t dim, std::size_t n_inputs, double tol = 1e-6) {
  double worst = 0.0;
  for (std::size_t k = 0; k < n_inputs; ++k) {
    const auto ep = detail::random_endpoints(rng, dim);
    const double t = detail::random_time(rng, grid);
    const Vec mu = bridge_mean(ep, t, sched);
    const double var = sched.bridge_coefficients(t).cap_sigma2;
    const double sd = std::sqrt(var);
    Vec x(dim);
    for (std::size_t i = 0; i < dim; ++i) x[i] = mu[i] + 2.0 * sd * rng.normal();
    auto log_density = [&](const Vec& y) {
      double q = 0.0;
      for (std::size_t i = 0; i < dim; ++i) q += (y[i] - mu[i]) * (y[i] - mu[i]);
      return -0.5 * q / var - 0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi * var);
    };
    const Vec score = analytic_posterior_score(x, ep, t, sched);
    const double h = 1e-3 * sd;
    double err2 = 0.0, norm2 = 0.0;
    for (std::size_t i = 0; i < dim; ++i) {
      Vec xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      const double fd = (log_density(xp) - log_density(xm)) / (2.0 * h);
      err2 += (fd - score[i]) * (fd - score[i]);
      norm2 += score[i] * score[i];
    }
    worst = std::max(worst, std::sqrt(err2 / norm2));
  }
  return {"score_oracle", worst <= tol, worst, tol, "max relative error vs finite differences"};
}

/// Closed-form endpoint of the constant-beta PF-ODE (zero base drift) from
/// (x_T, t_end = T) down to t: x1 + (x_T - x1) (T (1 - t) / ((1 - T) t))^(g / (2 beta)),
/// g = beta^2 or beta.
inline double linear_ode_solution(double x_start, double x1, double t_start, double t_end, double beta,
                                  bool beta_squared = true) {
  const double g = beta_squared ? beta * beta : beta;
  const double ratio = t_start * (1.0 - t_end) / ((1.0 - t_start) * t_end);
  return x1 + (x_start - x1) * std::pow(ratio, g / (2.0 * beta));
}

struct OdeStudy {
  double order = 0.0;      // min observed self-convergence order over successive halvings
  double rel_error = 0.0;  // relative error vs the closed form at `steps`
};

inline OdeStudy ode_study(double beta, const TimeGrid& grid, std::size_t steps = 256) {
  const auto sched = NoiseSchedule::constant(beta);
  const Vec x1{0.5};
  const BridgeSample start{{1.5}, grid.t_max()};
  auto run = [&](std::size_t n) { return integrate_pf_ode(start, grid.t_min(), n, x1, sched).x[0]; };
  const double ref = run(10000);
  OdeStudy s;
  s.order = INFINITY;
  double prev = std::abs(run(steps / 4) - ref);
  for (std::size_t n = steps / 2; n <= steps; n *= 2) {
    const double err = std::abs(run(n) - ref);
    s.order = std::min(s.order, std::log2(prev / err));
    prev = err;
  }
  const double exact = linear_ode_solution(start.x[0], x1[0], grid.t_max(), grid.t_min(), beta);
  s.rel_error = std::abs(run(steps) - exact) / std::abs(exact - x1[0]);
  return s;
}

inline std::vector<CheckResult> check_ode(double beta, const TimeGrid& grid, std::size_t steps = 256) {
  const auto s = ode_study(beta, grid, steps);
  return {{"ode_self_convergence", s.order >= 1.9, s.order, 1.9, "Heun order vs a 10^4-step reference"},
          {"ode_linear_oracle", s.rel_error <= 1e-4, s.rel_error, 1e-4,
           "relative error vs closed form at " + std::to_string(steps) + " steps"}};
}

}  // namespace csb
