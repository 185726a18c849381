#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "csb/error.hpp"

namespace csb {

struct AccumulatedVariances {
  double sigma2;      // integral of beta over [0, t]
  double sigma_bar2;  // integral of beta over [t, 1]
};

struct BridgeCoefficients {
  double a;           // weight on the data endpoint x0
  double b;           // weight on the prior endpoint x1
  double cap_sigma2;  // bridge posterior variance per component
};

/// Linear diffusion rate beta(t) = beta0 + (beta1 - beta0) t on [0, 1].
///
/// All accumulated quantities use closed-form integrals, so
/// sigma2(t) + sigma_bar2(t) equals total() up to rounding.
class NoiseSchedule {
 public:
  NoiseSchedule(double beta0 = 0.1, double beta1 = 20.0) : beta0_(beta0), beta1_(beta1) {
    if (!(beta0 > 0.0) || !(beta1 > 0.0) || !std::isfinite(beta0) || !std::isfinite(beta1)) {
      throw InvalidSchedule("noise schedule needs beta0 > 0 and beta1 > 0");
    }
  }

  static NoiseSchedule constant(double beta) { return NoiseSchedule(beta, beta); }

  double beta0() const noexcept { return beta0_; }
  double beta1() const noexcept { return beta1_; }

  // sigma^2(1), the variance accumulated over the whole interval.
  double total() const noexcept { return beta0_ + 0.5 * (beta1_ - beta0_); }

  double beta_at(double t) const {
    check_time(t);
    return beta0_ + (beta1_ - beta0_) * t;
  }

  AccumulatedVariances accumulated_variances(double t) const {
    check_time(t);
    const double sigma2 = beta0_ * t + 0.5 * (beta1_ - beta0_) * t * t;
    // Integrate [t,1] directly instead of subtracting, so sigma_bar2 keeps full
    // relative precision as t -> 1.
    const double u = 1.0 - t;
    const double sigma_bar2 = beta1_ * u - 0.5 * (beta1_ - beta0_) * u * u;
    return {std::max(sigma2, 0.0), std::max(sigma_bar2, 0.0)};
  }

  BridgeCoefficients bridge_coefficients(double t) const {
    const auto [s2, sb2] = accumulated_variances(t);
    const double sum = s2 + sb2;
    if (!(sum > 0.0)) throw InvalidSchedule("degenerate schedule: accumulated variance is zero");
    const double b = s2 / sum;
    return {1.0 - b, b, sb2 * s2 / sum};
  }

  /// Time derivatives of (a, b, cap_sigma2); used by the conditional velocity field.
  BridgeCoefficients bridge_coefficient_rates(double t) const {
    const double beta = beta_at(t);
    const auto [s2, sb2] = accumulated_variances(t);
    const double sum = total();
    return {-beta / sum, beta / sum, beta * (sb2 - s2) / sum};
  }

 private:
  static void check_time(double t) {
    if (!(t >= 0.0 && t <= 1.0)) {
      throw DomainError("time " + std::to_string(t) + " outside [0, 1]");
    }
  }

  double beta0_;
  double beta1_;
};

/// Uniform discretization t_0 = t_min < ... < t_N = t_max of (0, 1).
class TimeGrid {
 public:
  TimeGrid(std::size_t n_steps, double t_min, double t_max)
      : n_steps_(n_steps), t_min_(t_min), t_max_(t_max) {
    if (n_steps < 1) throw DomainError("time grid needs at least one step");
    if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) {
      throw DomainError("time grid needs 0 < t_min < t_max < 1");
    }
    nodes_.resize(n_steps + 1);
    const double h = (t_max - t_min) / static_cast<double>(n_steps);
    for (std::size_t i = 0; i <= n_steps; ++i) nodes_[i] = t_min + static_cast<double>(i) * h;
    nodes_.back() = t_max;
  }

  std::size_t n_steps() const noexcept { return n_steps_; }
  double t_min() const noexcept { return t_min_; }
  double t_max() const noexcept { return t_max_; }
  const std::vector<double>& nodes() const noexcept { return nodes_; }
  double operator[](std::size_t i) const { return nodes_.at(i); }

 private:
  std::size_t n_steps_;
  double t_min_;
  double t_max_;
  std::vector<double> nodes_;
};

inline TimeGrid make_grid(std::size_t n_steps, double t_min, double t_max) {
  return TimeGrid(n_steps, t_min, t_max);
}

}  // namespace csb
