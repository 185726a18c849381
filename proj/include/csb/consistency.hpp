#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "csb/bridge.hpp"
#include "csb/error.hpp"
#include "csb/net.hpp"
#include "csb/rng.hpp"
#include "csb/schedule.hpp"

namespace csb {

enum class Distance { SquaredL2, PseudoHuber };
enum class Coupling { SharedNoise, HeunStep };
// Scalar handed to the network's sinusoidal time embedding.
enum class TimeInput { Raw, LogVarianceRatio };

struct ConsistencyOptions {
  Distance distance = Distance::SquaredL2;
  double huber_c = 0.03;
  Coupling coupling = Coupling::SharedNoise;
  // Subtract cap_sigma2(t_min) inside the skip/output scalings so that
  // f(x, t_min) == x holds exactly.
  bool boundary_shift = true;
  // Sample with the EMA target instead of the online network.
  bool sample_with_target = false;
  TimeInput time_input = TimeInput::LogVarianceRatio;
  // Feed the network the standardized bridge residual
  // (x_t - b(t) x1) / sqrt(cap_sigma2(t) + a(t)^2 sigma_data^2) instead of x_t.
  bool center_input = true;
};

struct ConsistencyModel {
  DenoiserParams online;
  EmaParams target;
  NoiseSchedule sched;
  TimeGrid grid;
  double sigma_data = 0.5;
  ConsistencyOptions opts;

  static ConsistencyModel create(const MlpShape& shape, const NoiseSchedule& sched,
                                 const TimeGrid& grid, double sigma_data, double ema_decay,
                                 Rng& rng, ConsistencyOptions opts = {}) {
    auto online = DenoiserParams::init(shape, rng);
    EmaParams target{online, ema_decay};
    return {std::move(online), std::move(target), sched, grid, sigma_data, opts};
  }

  const DenoiserParams& sampling_params() const {
    return opts.sample_with_target ? target.params : online;
  }
};

struct TrainItem {
  Vec x0;
  Vec x1;
  Vec cond;
};

struct BoundaryScalings {
  double c_skip;
  double c_out;
};

inline BoundaryScalings boundary_scalings(const ConsistencyModel& m, double t) {
  if (!(t >= m.grid.t_min() - 1e-15 && t <= m.grid.t_max() + 1e-15)) {
    throw DomainError("parameterize: t outside [t_min, t_max]");
  }
  const double v = m.sched.bridge_coefficients(t).cap_sigma2;
  const double shift =
      m.opts.boundary_shift ? m.sched.bridge_coefficients(m.grid.t_min()).cap_sigma2 : 0.0;
  const double dv = std::max(v - shift, 0.0);
  const double sd2 = m.sigma_data * m.sigma_data;
  return {sd2 / (dv + sd2), std::sqrt(dv) * m.sigma_data / std::sqrt(sd2 + v)};
}

/// Network time coordinate. LogVarianceRatio uses ln(sigma2 / sigma_bar2) / 10,
/// which is monotone in t and stretches the ends of (0, 1) where the bridge
/// variance changes fastest.
inline double network_time(const ConsistencyModel& m, double t) {
  if (m.opts.time_input == TimeInput::Raw) return t;
  const auto [s2, sb2] = m.sched.accumulated_variances(t);
  return std::log(s2 / sb2) / 10.0;
}

/// State as presented to the network.
inline Vec network_input(const ConsistencyModel& m, std::span<const double> x_t, double t,
                         std::span<const double> prior) {
  Vec x(x_t.begin(), x_t.end());
  if (!m.opts.center_input) return x;
  if (prior.size() != x_t.size()) throw ShapeError("network_input: prior/state dimension mismatch");
  const auto c = m.sched.bridge_coefficients(t);
  const double scale = 1.0 / std::sqrt(c.cap_sigma2 + c.a * c.a * m.sigma_data * m.sigma_data);
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = scale * (x[i] - c.b * prior[i]);
  return x;
}

/// f = c_skip(t) x_t + c_out(t) raw.
inline Vec parameterize(std::span<const double> raw, std::span<const double> x_t, double t,
                        const ConsistencyModel& m) {
  if (raw.size() != x_t.size()) throw ShapeError("parameterize: raw/state dimension mismatch");
  const auto c = boundary_scalings(m, t);
  Vec f(x_t.size());
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = c.c_skip * x_t[i] + c.c_out * raw[i];
  return f;
}

/// Consistency function f_theta(x_t, t, cond) for the given parameter set.
/// `prior` is the bridge's x1 endpoint, used only for input centering.
inline Vec consistency_fn(const DenoiserParams& p, const ConsistencyModel& m,
                          std::span<const double> x_t, double t, std::span<const double> cond,
                          std::span<const double> prior) {
  return parameterize(forward(p, network_input(m, x_t, t, prior), network_time(m, t), cond), x_t, t, m);
}

namespace detail {

struct DistanceGrad {
  double value;
  Vec grad;  // d distance / d first argument
};

inline DistanceGrad distance(const ConsistencyOptions& o, std::span<const double> a,
                             std::span<const double> b) {
  double sq = 0.0;
  Vec diff(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff[i] = a[i] - b[i];
    sq += diff[i] * diff[i];
  }
  if (o.distance == Distance::SquaredL2) {
    for (auto& d : diff) d *= 2.0;
    return {sq, std::move(diff)};
  }
  const double root = std::sqrt(sq + o.huber_c * o.huber_c);
  for (auto& d : diff) d /= root;
  return {root - o.huber_c, std::move(diff)};
}

inline std::pair<BridgeSample, BridgeSample> make_pair(const ConsistencyModel& m,
                                                       const TrainItem& item, std::size_t n,
                                                       std::span<const double> z) {
  const Endpoints ep(item.x0, item.x1);
  return m.opts.coupling == Coupling::SharedNoise ? coupled_pair(ep, n, m.grid, m.sched, z)
                                                  : coupled_pair_heun(ep, n, m.grid, m.sched, z);
}

}  // namespace detail

/// lambda(t_n) d(f_theta(x_{t_{n+1}}, t_{n+1}), f_theta-(x_{t_n}, t_n)) with lambda == 1.
inline double csb_loss(const ConsistencyModel& m, const TrainItem& item, std::size_t n,
                       std::span<const double> z) {
  const auto [lo, hi] = detail::make_pair(m, item, n, z);
  const Vec target = consistency_fn(m.target.params, m, lo.x, lo.t, item.cond, item.x1);
  const Vec online = consistency_fn(m.online, m, hi.x, hi.t, item.cond, item.x1);
  const double loss = detail::distance(m.opts, online, target).value;
  if (!std::isfinite(loss)) throw TrainingError("non-finite consistency loss");
  return loss;
}

struct Draw {
  std::size_t n;
  Vec z;
};

/// Mean csb_loss over a batch and its gradient with respect to the online
/// parameters. The target network only contributes constants.
inline LossAndGrads csb_loss_and_grads(const ConsistencyModel& m, std::span<const TrainItem> batch,
                                       std::span<const Draw> draws) {
  if (batch.size() != draws.size()) throw ShapeError("one draw per batch item required");
  if (batch.empty()) throw DomainError("empty training batch");
  std::vector<NetInput> inputs;
  std::vector<Vec> targets;
  std::vector<BoundaryScalings> scalings;
  std::vector<Vec> states;
  inputs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto [lo, hi] = detail::make_pair(m, batch[i], draws[i].n, draws[i].z);
    targets.push_back(consistency_fn(m.target.params, m, lo.x, lo.t, batch[i].cond, batch[i].x1));
    scalings.push_back(boundary_scalings(m, hi.t));
    inputs.push_back({network_input(m, hi.x, hi.t, batch[i].x1), network_time(m, hi.t), batch[i].cond});
    states.push_back(std::move(hi.x));
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const BatchLossFn loss_fn = [&](const std::vector<Vec>& raw) {
    LossGrad lg;
    for (std::size_t i = 0; i < raw.size(); ++i) {
      const auto& c = scalings[i];
      Vec f(raw[i].size());
      for (std::size_t k = 0; k < f.size(); ++k) f[k] = c.c_skip * states[i][k] + c.c_out * raw[i][k];
      auto d = detail::distance(m.opts, f, targets[i]);
      lg.loss += inv_b * d.value;
      for (auto& g : d.grad) g *= inv_b * c.c_out;
      lg.d_outputs.push_back(std::move(d.grad));
    }
    return lg;
  };
  return loss_and_grads(m.online, inputs, loss_fn);
}

/// One optimizer step: draws n uniformly from {0..N-1} and a shared noise
/// vector per item, updates theta by Adam and theta- by EMA. Returns the
/// loss evaluated before the update.
inline double train_step(ConsistencyModel& m, std::span<const TrainItem> batch, AdamState& opt,
                         Rng& rng) {
  std::vector<Draw> draws;
  draws.reserve(batch.size());
  for (const auto& item : batch) {
    const std::size_t n = rng.index(0, m.grid.n_steps() - 1);
    draws.push_back({n, rng.normal_vec(item.x0.size())});
  }
  const auto lg = csb_loss_and_grads(m, batch, draws);
  adam_step(opt, m.online, lg.grads);
  ema_update(m.target, m.online);
  return lg.loss;
}

struct SampleResult {
  Vec x0;
  std::size_t nfe = 0;
};

/// Start state at time t with the unknown data term dropped: b(t) x1 + sqrt(cap_sigma2(t)) z.
inline Vec sampling_start(const ConsistencyModel& m, std::span<const double> x1, double t,
                          std::span<const double> z) {
  if (z.size() != x1.size()) throw ShapeError("sampling noise dimension mismatch");
  const auto c = m.sched.bridge_coefficients(t);
  const double sd = std::sqrt(c.cap_sigma2);
  Vec x(x1.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = c.b * x1[i] + sd * z[i];
  return x;
}

namespace detail {
inline void check_sampling_params(const ConsistencyModel& m, std::span<const double> x1) {
  if (!m.sampling_params().all_finite()) throw SamplingError("model parameters are not finite");
  if (x1.size() != m.online.shape().x_dim) throw ShapeError("sampling prior dimension mismatch");
}
}  // namespace detail

/// Single network evaluation from t_N straight to an estimate of x0.
inline SampleResult sample_one_step(const ConsistencyModel& m, std::span<const double> x1,
                                    std::span<const double> cond, std::span<const double> z) {
  detail::check_sampling_params(m, x1);
  const double t = m.grid.t_max();
  const Vec x = sampling_start(m, x1, t, z);
  return {consistency_fn(m.sampling_params(), m, x, t, cond, x1), 1};
}

/// Alternates denoising and bridge re-noising down the given descending grid times.
/// The first noise vector drawn from rng seeds the start state.
inline SampleResult sample_multistep(const ConsistencyModel& m, std::span<const double> x1,
                                     std::span<const double> cond, std::span<const double> times,
                                     Rng& rng) {
  detail::check_sampling_params(m, x1);
  if (times.empty()) throw DomainError("sample_multistep needs at least one time");
  const auto& nodes = m.grid.nodes();
  for (std::size_t i = 0; i < times.size(); ++i) {
    if (i > 0 && !(times[i] < times[i - 1])) throw DomainError("sampling times must descend");
    const bool on_grid = std::any_of(nodes.begin(), nodes.end(),
                                     [&](double n) { return std::abs(n - times[i]) <= 1e-12; });
    if (!on_grid) throw DomainError("sampling time is not a grid node");
  }
  const auto& p = m.sampling_params();
  Vec x = sampling_start(m, x1, times[0], rng.normal_vec(x1.size()));
  Vec x0 = consistency_fn(p, m, x, times[0], cond, x1);
  const Vec prior(x1.begin(), x1.end());
  for (std::size_t i = 1; i < times.size(); ++i) {
    const Vec z = rng.normal_vec(x1.size());
    x = sample_posterior(Endpoints(x0, prior), times[i], m.sched, z).x;
    x0 = consistency_fn(p, m, x, times[i], cond, x1);
  }
  return {std::move(x0), times.size()};
}

/// Grid times for an NFE-step sampler: indices round(N (1 - i/nfe)^2), i = 0..nfe-1,
/// which concentrates the later evaluations near t_min.
inline std::vector<double> multistep_times(const TimeGrid& grid, std::size_t nfe) {
  if (nfe < 1 || nfe > grid.n_steps()) throw DomainError("nfe must be in [1, N]");
  std::vector<double> times;
  std::size_t last = grid.n_steps() + 1;
  for (std::size_t i = 0; i < nfe; ++i) {
    const double frac = 1.0 - static_cast<double>(i) / static_cast<double>(nfe);
    auto idx = static_cast<std::size_t>(std::lround(static_cast<double>(grid.n_steps()) * frac * frac));
    idx = std::min(idx, last - 1);
    times.push_back(grid[idx]);
    last = idx;
  }
  return times;
}

/// Largest pairwise distance between f_theta evaluations at the given states,
/// which should lie on one probability-flow trajectory. Zero for a perfectly
/// self-consistent model.
inline double trajectory_spread(const ConsistencyModel& m, std::span<const BridgeSample> states,
                                std::span<const double> cond, std::span<const double> prior) {
  std::vector<Vec> outs;
  outs.reserve(states.size());
  for (const auto& s : states) outs.push_back(consistency_fn(m.online, m, s.x, s.t, cond, prior));
  double worst = 0.0;
  for (std::size_t i = 0; i < outs.size(); ++i) {
    for (std::size_t j = i + 1; j < outs.size(); ++j) {
      double sq = 0.0;
      for (std::size_t k = 0; k < outs[i].size(); ++k) {
        const double d = outs[i][k] - outs[j][k];
        sq += d * d;
      }
      worst = std::max(worst, std::sqrt(sq));
    }
  }
  return worst;
}

/// Two-channel reconstruction loss with a clamped channel-repulsion term:
/// |gL-rL|^2 + |gR-rR|^2 - w min(|gL-gR|^2, recon). With `clamp` off the
/// repulsion is unbounded, as in the raw objective.
inline double enhancement_loss(std::span<const double> gen_left, std::span<const double> gen_right,
                               std::span<const double> ref_left, std::span<const double> ref_right,
                               double repulsion_weight = 0.1, bool clamp = true) {
  const std::size_t n = gen_left.size();
  if (gen_right.size() != n || ref_left.size() != n || ref_right.size() != n) {
    throw ShapeError("enhancement_loss: channel blocks differ in shape");
  }
  double recon = 0.0;
  double repel = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dl = gen_left[i] - ref_left[i];
    const double dr = gen_right[i] - ref_right[i];
    const double dc = gen_left[i] - gen_right[i];
    recon += dl * dl + dr * dr;
    repel += dc * dc;
  }
  if (clamp) repel = std::min(repel, recon);
  return recon - repulsion_weight * repel;
}

}  // namespace csb
