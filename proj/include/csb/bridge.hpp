#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csb/error.hpp"
#include "csb/rng.hpp"
#include "csb/schedule.hpp"

namespace csb {

// cap_sigma2 below this is treated as an endpoint; divisions by it are refused.
inline constexpr double kVarianceFloor = 1e-12;

struct BridgeSample {
  Vec x;
  double t = 0.0;
};

struct Endpoints {
  Vec x0;  // clean target (stereo: left half then right half)
  Vec x1;  // prior / linguistic-representation endpoint

  Endpoints(Vec data, Vec prior) : x0(std::move(data)), x1(std::move(prior)) {
    if (x0.size() != x1.size()) throw ShapeError("endpoint dimensions differ");
  }
  std::size_t dim() const noexcept { return x0.size(); }
};

/// Base drift f(x, t) of the probability-flow ODE. Empty means f == 0.
using BaseDrift = std::function<Vec(std::span<const double>, double)>;

struct DriftOptions {
  bool beta_squared = true;  // scale by beta(t)^2 as printed; false uses beta(t)
  BaseDrift base;
};

namespace detail {
inline void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": dimension " + std::to_string(a) + " vs " +
                     std::to_string(b));
  }
}

inline double safe_variance(const NoiseSchedule& sched, double t) {
  const double v = sched.bridge_coefficients(t).cap_sigma2;
  if (!(v > kVarianceFloor)) {
    throw NearEndpointError("bridge variance at t=" + std::to_string(t) +
                            " is below the numeric floor");
  }
  return v;
}
}  // namespace detail

/// Posterior mean mu_t = a x0 + b x1.
inline Vec bridge_mean(const Endpoints& ep, double t, const NoiseSchedule& sched) {
  const auto c = sched.bridge_coefficients(t);
  Vec mu(ep.dim());
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = c.a * ep.x0[i] + c.b * ep.x1[i];
  return mu;
}

/// Draws x_t ~ N(mu_t, cap_sigma2 I) using the caller's standard-normal vector z.
inline BridgeSample sample_posterior(const Endpoints& ep, double t, const NoiseSchedule& sched,
                                     std::span<const double> z) {
  detail::require_same(z.size(), ep.dim(), "sample_posterior noise");
  if (!(t > 0.0 && t < 1.0)) throw DomainError("sample_posterior needs t in (0, 1)");
  const auto c = sched.bridge_coefficients(t);
  const double sd = std::sqrt(c.cap_sigma2);
  BridgeSample s{Vec(ep.dim()), t};
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    s.x[i] = c.a * ep.x0[i] + c.b * ep.x1[i] + sd * z[i];
  }
  return s;
}

/// Gradient of log N(x_t; mu_t, cap_sigma2 I): -(x_t - mu_t) / cap_sigma2.
inline Vec analytic_posterior_score(std::span<const double> x_t, const Endpoints& ep, double t,
                                    const NoiseSchedule& sched) {
  detail::require_same(x_t.size(), ep.dim(), "analytic_posterior_score");
  const double v = detail::safe_variance(sched, t);
  const auto mu = bridge_mean(ep, t, sched);
  Vec score(x_t.size());
  for (std::size_t i = 0; i < score.size(); ++i) score[i] = -(x_t[i] - mu[i]) / v;
  return score;
}

/// Single-sample estimator -(x1 - x_t) / cap_sigma2.
inline Vec paper_score_estimate(std::span<const double> x_t, std::span<const double> x1, double t,
                                const NoiseSchedule& sched) {
  detail::require_same(x_t.size(), x1.size(), "paper_score_estimate");
  const double v = detail::safe_variance(sched, t);
  Vec score(x_t.size());
  for (std::size_t i = 0; i < score.size(); ++i) score[i] = -(x1[i] - x_t[i]) / v;
  return score;
}

/// Probability-flow drift f(x_t, t) + 1/2 beta(t)^2 (x1 - x_t) / cap_sigma2.
inline Vec pf_ode_drift(std::span<const double> x_t, std::span<const double> x1, double t,
                        const NoiseSchedule& sched, const DriftOptions& opts = {}) {
  detail::require_same(x_t.size(), x1.size(), "pf_ode_drift");
  const double v = detail::safe_variance(sched, t);
  const double beta = sched.beta_at(t);
  const double g2 = opts.beta_squared ? beta * beta : beta;
  Vec drift = opts.base ? opts.base(x_t, t) : Vec(x_t.size(), 0.0);
  detail::require_same(drift.size(), x_t.size(), "base drift");
  for (std::size_t i = 0; i < drift.size(); ++i) drift[i] += 0.5 * g2 * (x1[i] - x_t[i]) / v;
  return drift;
}

/// Velocity of the Gaussian bridge path for fixed endpoints:
/// d mu_t/dt - (1/2) d cap_sigma2/dt * analytic_posterior_score.
/// Integrating it carries x_t along the same-noise path mu_t + sqrt(cap_sigma2) z.
inline Vec conditional_velocity(std::span<const double> x_t, const Endpoints& ep, double t,
                                const NoiseSchedule& sched) {
  const auto rate = sched.bridge_coefficient_rates(t);
  const auto score = analytic_posterior_score(x_t, ep, t, sched);
  Vec v(x_t.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = rate.a * ep.x0[i] + rate.b * ep.x1[i] - 0.5 * rate.cap_sigma2 * score[i];
  }
  return v;
}

using VectorField = std::function<Vec(std::span<const double>, double)>;

/// Heun (explicit trapezoidal) integration through the given time nodes.
/// Throws DivergenceError naming the first step whose state is non-finite.
inline Vec heun_integrate(const VectorField& field, Vec x, std::span<const double> nodes) {
  for (std::size_t k = 0; k + 1 < nodes.size(); ++k) {
    const double t0 = nodes[k];
    const double h = nodes[k + 1] - t0;
    const Vec k1 = field(x, t0);
    Vec pred(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) pred[i] = x[i] + h * k1[i];
    const Vec k2 = field(pred, nodes[k + 1]);
    for (std::size_t i = 0; i < x.size(); ++i) {
      x[i] += 0.5 * h * (k1[i] + k2[i]);
      if (!std::isfinite(x[i])) throw DivergenceError("non-finite ODE state", k + 1);
    }
  }
  return x;
}

inline std::vector<double> uniform_nodes(double t_start, double t_end, std::size_t steps) {
  std::vector<double> nodes(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    nodes[i] = t_start + (t_end - t_start) * static_cast<double>(i) / static_cast<double>(steps);
  }
  nodes.back() = t_end;
  return nodes;
}

/// Integrates the bridge PF-ODE from start.t to t_end with `steps` Heun steps
/// taken in the logit time s = ln(t / (1 - t)), i.e. on dx/ds = drift * t (1 - t).
/// The drift carries a 1/cap_sigma2 factor that blows up at both ends of
/// (0, 1); in s the constant-beta drift has a constant rate.
inline BridgeSample integrate_pf_ode(const BridgeSample& start, double t_end, std::size_t steps,
                                     std::span<const double> x1, const NoiseSchedule& sched,
                                     const DriftOptions& opts = {}) {
  if (steps < 1) throw DomainError("integrate_pf_ode needs at least one step");
  if (!(t_end > 0.0 && t_end < 1.0)) throw DomainError("integrate_pf_ode end time outside (0, 1)");
  if (!(start.t > 0.0 && start.t < 1.0)) throw DomainError("integrate_pf_ode start time outside (0, 1)");
  detail::require_same(start.x.size(), x1.size(), "integrate_pf_ode");
  if (t_end == start.t) return start;
  const Vec prior(x1.begin(), x1.end());
  const VectorField field = [&](std::span<const double> x, double s) {
    const double t = 1.0 / (1.0 + std::exp(-s));
    Vec d = pf_ode_drift(x, prior, t, sched, opts);
    for (auto& v : d) v *= t * (1.0 - t);
    return d;
  };
  auto logit = [](double t) { return std::log(t / (1.0 - t)); };
  const auto nodes = uniform_nodes(logit(start.t), logit(t_end), steps);
  return {heun_integrate(field, start.x, nodes), t_end};
}

/// Adjacent states (x_{t_n}, x_{t_{n+1}}) sharing one noise draw z.
inline std::pair<BridgeSample, BridgeSample> coupled_pair(const Endpoints& ep, std::size_t n,
                                                          const TimeGrid& grid,
                                                          const NoiseSchedule& sched,
                                                          std::span<const double> z) {
  if (n >= grid.n_steps()) throw DomainError("coupled_pair index out of range");
  return {sample_posterior(ep, grid[n], sched, z), sample_posterior(ep, grid[n + 1], sched, z)};
}

/// Alternative coupling: x_{t_{n+1}} from shared noise, x_{t_n} by one Heun step
/// of conditional_velocity back to t_n.
inline std::pair<BridgeSample, BridgeSample> coupled_pair_heun(const Endpoints& ep, std::size_t n,
                                                               const TimeGrid& grid,
                                                               const NoiseSchedule& sched,
                                                               std::span<const double> z) {
  if (n >= grid.n_steps()) throw DomainError("coupled_pair index out of range");
  auto upper = sample_posterior(ep, grid[n + 1], sched, z);
  const VectorField field = [&](std::span<const double> x, double t) {
    return conditional_velocity(x, ep, t, sched);
  };
  const double nodes[2] = {grid[n + 1], grid[n]};
  BridgeSample lower{heun_integrate(field, upper.x, nodes), grid[n]};
  return {std::move(lower), std::move(upper)};
}

}  // namespace csb
