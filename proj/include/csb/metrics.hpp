#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "csb/dsp.hpp"
#include "csb/error.hpp"
#include "csb/matrix.hpp"

namespace csb {

// 10 sqrt(2) / ln 10: converts a cepstral Euclidean distance to dB.
inline const double kMcdScale = 10.0 * std::numbers::sqrt2 / std::numbers::ln10;

/// Frame-aligned mel cepstral distortion in dB, c0 excluded.
inline double mcd(const Matrix& ref, const Matrix& syn) {
  if (ref.rows != syn.rows) {
    throw MetricError("mcd: frame counts differ (" + std::to_string(ref.rows) + " vs " +
                      std::to_string(syn.rows) + "); inputs must be frame-aligned");
  }
  if (ref.cols != syn.cols) throw ShapeError("mcd: cepstral orders differ");
  if (ref.rows == 0) throw MetricError("mcd: no frames");
  double total = 0.0;
  for (std::size_t f = 0; f < ref.rows; ++f) {
    double sq = 0.0;
    for (std::size_t k = 1; k < ref.cols; ++k) {
      const double d = ref(f, k) - syn(f, k);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return kMcdScale * total / static_cast<double>(ref.rows);
}

enum class LreMode { Decibel, LinearRatio };

inline double channel_energy(std::span<const double> x) {
  double e = 0.0;
  for (double v : x) e += v * v;
  return e;
}

/// Left/right energy-ratio error between two stereo signals.
inline double lre(const StereoWaveform& ref, const StereoWaveform& syn, LreMode mode = LreMode::Decibel) {
  if (ref.channel_count() != 2 || syn.channel_count() != 2) throw MetricError("lre: both inputs must be stereo");
  constexpr double guard = 1e-12;
  auto ratio = [&](const StereoWaveform& w) {
    return (channel_energy(w.channels[0]) + guard) / (channel_energy(w.channels[1]) + guard);
  };
  if (mode == LreMode::LinearRatio) return std::abs(ratio(syn) - ratio(ref));
  return std::abs(10.0 * std::log10(ratio(syn)) - 10.0 * std::log10(ratio(ref)));
}

/// Schroeder energy decay curve in dB relative to the total energy.
inline std::vector<double> energy_decay_curve_db(std::span<const double> ir) {
  std::vector<double> edc(ir.size());
  double acc = 0.0;
  for (std::size_t i = ir.size(); i-- > 0;) {
    acc += ir[i] * ir[i];
    edc[i] = acc;
  }
  const double total = edc.empty() ? 0.0 : edc.front();
  if (!(total > 0.0)) throw MetricError("rt60: impulse response has no energy");
  for (auto& v : edc) v = v > 0.0 ? 10.0 * std::log10(v / total) : -INFINITY;
  return edc;
}

/// RT60 from a least-squares line through the -5..-35 dB span of the
/// backward-integrated decay curve (T30 extrapolated to 60 dB).
inline double rt60_schroeder(std::span<const double> ir, int rate) {
  if (rate <= 0) throw DomainError("rt60: sample rate must be positive");
  const auto edc = energy_decay_curve_db(ir);
  constexpr double top = -5.0;
  constexpr double bottom = -35.0;
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  std::size_t n = 0;
  double lowest = 0.0;
  for (std::size_t i = 0; i < edc.size(); ++i) {
    const double db = edc[i];
    if (db > top) continue;
    if (db < bottom || !std::isfinite(db)) break;
    const double t = static_cast<double>(i) / rate;
    sx += t;
    sy += db;
    sxx += t * t;
    sxy += t * db;
    ++n;
    lowest = db;
  }
  if (n < 2 || top - lowest < 10.0) throw MetricError("rt60: decay span shorter than 10 dB, estimate unreliable");
  const double denom = static_cast<double>(n) * sxx - sx * sx;
  const double slope = (static_cast<double>(n) * sxy - sx * sy) / denom;
  if (!(slope < 0.0)) throw MetricError("rt60: decay curve does not decrease");
  return 60.0 / std::abs(slope);
}

inline double rte(double rt60_ref, double rt60_syn) {
  if (!(rt60_ref >= 0.0 && rt60_syn >= 0.0)) throw DomainError("rte: RT60 values must be >= 0");
  return std::abs(rt60_ref - rt60_syn);
}

inline double rtf(double wall_seconds, double audio_seconds) {
  if (!(audio_seconds > 0.0)) throw DomainError("rtf: audio duration must be positive");
  if (!(wall_seconds >= 0.0)) throw DomainError("rtf: wall time must be >= 0");
  return wall_seconds / audio_seconds;
}

/// Per-channel full convolution of a dry signal with a left/right impulse
/// response pair. Both channels are scaled together only if the peak exceeds 1.
inline StereoWaveform synth_reverb_stereo(std::span<const double> dry, std::span<const double> ir_left,
                                          std::span<const double> ir_right, int rate = kSampleRate) {
  if (ir_left.empty() || ir_right.empty()) throw DomainError("synth_reverb_stereo: empty impulse response");
  if (dry.empty()) throw DomainError("synth_reverb_stereo: empty dry signal");
  StereoWaveform w{rate, {convolve(dry, ir_left), convolve(dry, ir_right)}};
  const std::size_t len = std::max(w.channels[0].size(), w.channels[1].size());
  double peak = 0.0;
  for (auto& c : w.channels) {
    c.resize(len, 0.0);
    for (double v : c) peak = std::max(peak, std::abs(v));
  }
  if (peak > 1.0) {
    for (auto& c : w.channels)
      for (auto& v : c) v /= peak;
  }
  return w;
}

/// Mel cepstra of one channel at the standard analysis settings.
inline Matrix channel_cepstra(const StereoWaveform& w, std::size_t ch) {
  return mel_cepstra(log_mel(w.channels.at(ch), w.rate));
}

struct MetricReport {
  std::string system = "csb";
  double mcd_db = 0.0;
  double lre_db = 0.0;
  double rte_s = 0.0;
  double rtf = 0.0;
  std::size_t nfe = 1;
  std::map<std::string, std::string> metadata;
};

}  // namespace csb
