#pragma once

// Two-component Gaussian toy problem with analytic ground truth.
//
// Each item picks a component k, sets the prior endpoint x1 to the component
// mean m_k (the "linguistic representation" of the item) and draws the data
// endpoint x0 ~ N(m_k, s^2 I). Conditioning is the same mean. Given x1, the
// bridge marginal is Gaussian, x_t ~ N(m_k, v(t) I) with
// v(t) = a(t)^2 s^2 + cap_sigma2(t), so its score and probability-flow
// velocity are available in closed form.

#include <cmath>
#include <span>
#include <vector>

#include "csb/bridge.hpp"
#include "csb/consistency.hpp"
#include "csb/rng.hpp"
#include "csb/schedule.hpp"

namespace csb {

struct ToySpec {
  std::vector<Vec> means = {{-1.5, -0.5}, {1.5, 0.5}};
  double stddev = 0.3;
  double weight0 = 0.5;  // probability of component 0

  std::size_t dim() const { return means.front().size(); }
};

inline std::vector<TrainItem> sample_toy(const ToySpec& spec, std::size_t count, Rng& rng) {
  std::vector<TrainItem> items;
  items.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const Vec& m = spec.means[rng.uniform() < spec.weight0 ? 0 : 1];
    Vec x0 = m;
    for (auto& v : x0) v += spec.stddev * rng.normal();
    items.push_back({std::move(x0), m, m});
  }
  return items;
}

/// Energy distance between the empirical measures of two samples
/// (V-statistic: 2 E|X-Y| - E|X-X'| - E|Y-Y'|, diagonal terms included).
inline double energy_distance(const std::vector<Vec>& xs, const std::vector<Vec>& ys) {
  if (xs.empty() || ys.empty()) throw DomainError("energy_distance of an empty sample");
  auto mean_dist = [](const std::vector<Vec>& a, const std::vector<Vec>& b) {
    double total = 0.0;
    for (const auto& u : a) {
      double row = 0.0;
      for (const auto& v : b) {
        double sq = 0.0;
        for (std::size_t k = 0; k < u.size(); ++k) {
          const double d = u[k] - v[k];
          sq += d * d;
        }
        row += std::sqrt(sq);
      }
      total += row;
    }
    return total / (static_cast<double>(a.size()) * static_cast<double>(b.size()));
  };
  return 2.0 * mean_dist(xs, ys) - mean_dist(xs, xs) - mean_dist(ys, ys);
}

/// Marginal variance of the toy bridge given x1 and its time derivative.
inline std::pair<double, double> toy_marginal_variance(const NoiseSchedule& sched, double stddev, double t) {
  const auto c = sched.bridge_coefficients(t);
  const auto r = sched.bridge_coefficient_rates(t);
  const double s2 = stddev * stddev;
  return {c.a * c.a * s2 + c.cap_sigma2, 2.0 * c.a * r.a * s2 + r.cap_sigma2};
}

/// Probability-flow velocity of the toy marginal: -(1/2) v'(t) * score with
/// score = -(x - m) / v(t).
inline Vec toy_pf_velocity(std::span<const double> x, std::span<const double> mean, const NoiseSchedule& sched,
                           double stddev, double t) {
  const auto [v, dv] = toy_marginal_variance(sched, stddev, t);
  Vec out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double score = -(x[i] - mean[i]) / v;
    out[i] = -0.5 * dv * score;
  }
  return out;
}

/// Time nodes from t_max down to t_min, uniform in sqrt(1 - t) so steps
/// shrink where the bridge variance collapses near t = 1.
inline std::vector<double> sqrt_spaced_nodes(double t_max, double t_min, std::size_t steps) {
  std::vector<double> nodes(steps + 1);
  const double u0 = std::sqrt(1.0 - t_max);
  const double u1 = std::sqrt(1.0 - t_min);
  for (std::size_t i = 0; i <= steps; ++i) {
    const double u = u0 + (u1 - u0) * static_cast<double>(i) / static_cast<double>(steps);
    nodes[i] = 1.0 - u * u;
  }
  nodes.front() = t_max;
  nodes.back() = t_min;
  return nodes;
}

/// Reference sampler: Heun integration of the analytic probability flow from
/// the same start state the consistency sampler uses.
inline Vec toy_ode_sample(const ConsistencyModel& m, const ToySpec& spec, std::span<const double> x1,
                          std::span<const double> z, std::size_t steps = 256) {
  const Vec start = sampling_start(m, x1, m.grid.t_max(), z);
  const Vec mean(x1.begin(), x1.end());
  const VectorField field = [&](std::span<const double> x, double t) {
    return toy_pf_velocity(x, mean, m.sched, spec.stddev, t);
  };
  const auto nodes = sqrt_spaced_nodes(m.grid.t_max(), m.grid.t_min(), steps);
  return heun_integrate(field, start, nodes);
}

/// States of one analytic probability-flow trajectory at every grid node,
/// integrated downwards from the sampling start state with `substeps` Heun
/// steps per grid interval.
inline std::vector<BridgeSample> toy_pf_trajectory(const ConsistencyModel& m, const ToySpec& spec,
                                                   std::span<const double> x1, std::span<const double> z,
                                                   std::size_t substeps = 32) {
  const Vec mean(x1.begin(), x1.end());
  const VectorField field = [&](std::span<const double> x, double t) {
    return toy_pf_velocity(x, mean, m.sched, spec.stddev, t);
  };
  const auto& nodes = m.grid.nodes();
  std::vector<BridgeSample> out;
  out.reserve(nodes.size());
  Vec x = sampling_start(m, x1, nodes.back(), z);
  out.push_back({x, nodes.back()});
  for (std::size_t n = nodes.size() - 1; n-- > 0;) {
    x = heun_integrate(field, x, sqrt_spaced_nodes(nodes[n + 1], nodes[n], substeps));
    out.push_back({x, nodes[n]});
  }
  return out;
}

}  // namespace csb
