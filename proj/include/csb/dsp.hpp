#pragma once

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "csb/error.hpp"
#include "csb/matrix.hpp"

namespace csb {

inline constexpr int kSampleRate = 22050;
inline constexpr std::size_t kFrameSize = 512;
inline constexpr std::size_t kHop = 128;
inline constexpr std::size_t kMelBins = 80;

struct StereoWaveform {
  int rate = kSampleRate;
  std::vector<std::vector<double>> channels;  // 1 or 2, equal length

  std::size_t channel_count() const noexcept { return channels.size(); }
  std::size_t length() const noexcept { return channels.empty() ? 0 : channels.front().size(); }
  double seconds() const noexcept { return static_cast<double>(length()) / rate; }

  void validate() const {
    if (rate <= 0) throw DomainError("sample rate must be positive");
    if (channels.empty() || channels.size() > 2) throw ShapeError("waveform needs 1 or 2 channels");
    for (const auto& c : channels) {
      if (c.size() != channels.front().size()) throw ShapeError("waveform channels differ in length");
    }
  }
};

// ---------------------------------------------------------------------------
// WAV (RIFF/WAVE, PCM 16-bit)
// ---------------------------------------------------------------------------

namespace detail {
inline std::uint32_t le32(const std::string& b, std::size_t p) {
  return static_cast<std::uint32_t>(static_cast<unsigned char>(b[p])) |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 1])) << 8 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 2])) << 16 |
         static_cast<std::uint32_t>(static_cast<unsigned char>(b[p + 3])) << 24;
}
inline std::uint16_t le16(const std::string& b, std::size_t p) {
  return static_cast<std::uint16_t>(static_cast<unsigned char>(b[p]) |
                                    static_cast<unsigned char>(b[p + 1]) << 8);
}
inline void w32(std::string& o, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) o.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void w16(std::string& o, std::uint16_t v) {
  o.push_back(static_cast<char>(v & 0xff));
  o.push_back(static_cast<char>(v >> 8));
}
}  // namespace detail

inline StereoWaveform decode_wav(const std::string& b) {
  if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
    throw ParseError("RIFF header: not a RIFF/WAVE file");
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= b.size()) {
    const std::string id = b.substr(pos, 4);
    const std::uint32_t size = detail::le32(b, pos + 4);
    const std::size_t body = pos + 8;
    if (body + size > b.size()) throw ParseError("chunk '" + id + "': truncated");
    if (id == "fmt ") {
      if (size < 16) throw ParseError("chunk 'fmt ': too short");
      const auto format = detail::le16(b, body);
      channels = detail::le16(b, body + 2);
      rate = detail::le32(b, body + 4);
      bits = detail::le16(b, body + 14);
      if (format != 1) throw ParseError("chunk 'fmt ': unsupported encoding " + std::to_string(format));
      if (bits != 16) throw ParseError("chunk 'fmt ': unsupported bit depth " + std::to_string(bits));
      if (channels < 1 || channels > 2) throw ParseError("chunk 'fmt ': unsupported channel count");
      if (rate == 0) throw ParseError("chunk 'fmt ': zero sample rate");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw ParseError("chunk 'data': appears before 'fmt '");
      const std::size_t frame_bytes = 2u * channels;
      if (size % frame_bytes != 0) throw ParseError("chunk 'data': size is not a whole number of frames");
      const std::size_t n = size / frame_bytes;
      StereoWaveform w{static_cast<int>(rate), std::vector<std::vector<double>>(channels, std::vector<double>(n))};
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          const auto raw = static_cast<std::int16_t>(detail::le16(b, body + i * frame_bytes + 2 * c));
          w.channels[c][i] = static_cast<double>(raw) / 32768.0;
        }
      }
      return w;
    }
    pos = body + size + (size & 1u);
  }
  throw ParseError(have_fmt ? "chunk 'data': missing" : "chunk 'fmt ': missing");
}

inline StereoWaveform read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open " + path);
  return decode_wav(std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>()));
}

inline std::int16_t to_pcm16(double x) {
  const double s = std::round(std::clamp(x, -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(s, -32768.0, 32767.0));
}

inline std::string encode_wav(const StereoWaveform& w) {
  w.validate();
  const auto ch = static_cast<std::uint16_t>(w.channel_count());
  const auto data_size = static_cast<std::uint32_t>(w.length() * ch * 2);
  std::string o = "RIFF";
  detail::w32(o, 36 + data_size);
  o += "WAVEfmt ";
  detail::w32(o, 16);
  detail::w16(o, 1);
  detail::w16(o, ch);
  detail::w32(o, static_cast<std::uint32_t>(w.rate));
  detail::w32(o, static_cast<std::uint32_t>(w.rate) * ch * 2);
  detail::w16(o, static_cast<std::uint16_t>(ch * 2));
  detail::w16(o, 16);
  o += "data";
  detail::w32(o, data_size);
  for (std::size_t i = 0; i < w.length(); ++i) {
    for (std::size_t c = 0; c < ch; ++c) detail::w16(o, static_cast<std::uint16_t>(to_pcm16(w.channels[c][i])));
  }
  return o;
}

inline void write_wav(const std::string& path, const StereoWaveform& w) {
  const auto bytes = encode_wav(w);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// FFT helpers (FFTW, estimate-mode plans so results do not depend on timing)
// ---------------------------------------------------------------------------

namespace detail {
struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanDestroy {
  void operator()(fftw_plan p) const { fftw_destroy_plan(p); }
};
using PlanPtr = std::unique_ptr<std::remove_pointer_t<fftw_plan>, PlanDestroy>;

/// Real-to-complex transform of fixed size n; reusable across frames.
class RealFft {
 public:
  explicit RealFft(std::size_t n)
      : n_(n),
        in_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        out_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))),
        plan_(fftw_plan_dft_r2c_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE)) {}

  std::size_t size() const noexcept { return n_; }
  std::span<double> input() noexcept { return {in_.get(), n_}; }
  std::span<const fftw_complex> execute() {
    fftw_execute(plan_.get());
    return {out_.get(), n_ / 2 + 1};
  }

 private:
  std::size_t n_;
  std::unique_ptr<double, FftwFree> in_;
  std::unique_ptr<fftw_complex, FftwFree> out_;
  PlanPtr plan_;
};

class InverseRealFft {
 public:
  explicit InverseRealFft(std::size_t n)
      : n_(n),
        in_(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * (n / 2 + 1)))),
        out_(static_cast<double*>(fftw_malloc(sizeof(double) * n))),
        plan_(fftw_plan_dft_c2r_1d(static_cast<int>(n), in_.get(), out_.get(), FFTW_ESTIMATE)) {}

  std::span<fftw_complex> input() noexcept { return {in_.get(), n_ / 2 + 1}; }
  // Unnormalized: the result is n times the inverse DFT.
  std::span<const double> execute() {
    fftw_execute(plan_.get());
    return {out_.get(), n_};
  }

 private:
  std::size_t n_;
  std::unique_ptr<fftw_complex, FftwFree> in_;
  std::unique_ptr<double, FftwFree> out_;
  PlanPtr plan_;
};
}  // namespace detail

/// Periodic Hann window.
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::size_t frame_size = kFrameSize;
  std::size_t hop = kHop;
  std::vector<std::complex<double>> values;  // frames x bins

  std::complex<double> at(std::size_t f, std::size_t k) const { return values[f * bins + k]; }

  Matrix magnitude() const {
    Matrix m(frames, bins);
    for (std::size_t i = 0; i < values.size(); ++i) m.data[i] = std::abs(values[i]);
    return m;
  }
};

/// Number of frames produced by stft: 1 + ceil(len / hop).
inline std::size_t stft_frame_count(std::size_t len, std::size_t hop) { return 1 + (len + hop - 1) / hop; }

/// Centered STFT: the signal is reflection-padded by frame_size/2 on both
/// sides, then zero-padded on the right so that the frame count is
/// 1 + ceil(len / hop).
inline Spectrogram stft(std::span<const double> x, std::size_t frame_size = kFrameSize,
                        std::size_t hop = kHop) {
  if (frame_size < 2 || hop < 1) throw DomainError("stft: invalid frame size or hop");
  if (x.size() < frame_size) throw DomainError("stft: signal shorter than one frame");
  const std::size_t pad = frame_size / 2;
  const std::size_t frames = stft_frame_count(x.size(), hop);
  const std::size_t padded_len = (frames - 1) * hop + frame_size;
  std::vector<double> padded(padded_len, 0.0);
  const auto n = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t i = 0; i < padded_len; ++i) {
    std::ptrdiff_t src = static_cast<std::ptrdiff_t>(i) - static_cast<std::ptrdiff_t>(pad);
    if (src < 0) src = -src;
    else if (src >= n) {
      if (src >= n + static_cast<std::ptrdiff_t>(pad)) continue;  // tail beyond the reflection
      src = 2 * (n - 1) - src;
    }
    padded[i] = x[static_cast<std::size_t>(src)];
  }
  const auto window = hann_window(frame_size);
  detail::RealFft fft(frame_size);
  Spectrogram s{frames, frame_size / 2 + 1, frame_size, hop, {}};
  s.values.resize(frames * s.bins);
  for (std::size_t f = 0; f < frames; ++f) {
    auto in = fft.input();
    for (std::size_t i = 0; i < frame_size; ++i) in[i] = padded[f * hop + i] * window[i];
    const auto out = fft.execute();
    for (std::size_t k = 0; k < s.bins; ++k) s.values[f * s.bins + k] = {out[k][0], out[k][1]};
  }
  return s;
}

/// Energy of windowed frame f recovered from its one-sided spectrum divided
/// by the time-domain energy; 1 up to rounding.
inline double frame_parseval_ratio(const Spectrogram& s, std::span<const double> windowed_frame,
                                   std::size_t f) {
  double time_energy = 0.0;
  for (double v : windowed_frame) time_energy += v * v;
  double spec_energy = 0.0;
  const std::size_t n = s.frame_size;
  for (std::size_t k = 0; k < s.bins; ++k) {
    const double w = (k == 0 || (n % 2 == 0 && k == n / 2)) ? 1.0 : 2.0;
    spec_energy += w * std::norm(s.at(f, k));
  }
  return spec_energy / static_cast<double>(n) / time_energy;
}

inline double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
inline double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

/// Triangular filters on the HTK mel scale, one row per filter over the
/// n_fft/2+1 bins. Filter centres are evenly spaced in mel from fmin to fmax,
/// with the outer edges one spacing beyond, so every bin in [fmin, fmax] is
/// covered.
inline Matrix mel_filterbank(std::size_t n_mels = kMelBins, int rate = kSampleRate,
                             std::size_t n_fft = kFrameSize, double fmin = 0.0, double fmax = -1.0) {
  if (fmax < 0.0) fmax = rate / 2.0;
  const std::size_t bins = n_fft / 2 + 1;
  if (n_mels < 2 || n_mels >= bins) throw DomainError("mel_filterbank: need 2 <= n_mels < bins");
  if (!(fmin >= 0.0 && fmin < fmax && fmax <= rate / 2.0)) throw DomainError("mel_filterbank: invalid range");
  const double lo = hz_to_mel(fmin);
  const double step = (hz_to_mel(fmax) - lo) / static_cast<double>(n_mels - 1);
  std::vector<double> edge(n_mels + 2);
  for (std::size_t j = 0; j < edge.size(); ++j) {
    edge[j] = mel_to_hz(lo + (static_cast<double>(j) - 1.0) * step);
  }
  Matrix fb(n_mels, bins);
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double left = edge[m], centre = edge[m + 1], right = edge[m + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * rate / static_cast<double>(n_fft);
      double w = 0.0;
      if (f > left && f <= centre) w = (f - left) / (centre - left);
      else if (f > centre && f < right) w = (right - f) / (right - centre);
      fb(m, k) = w;
    }
  }
  return fb;
}

struct LogMelConfig {
  double log_lo = -11.5;  // log-mel value mapped to -1
  double log_hi = 2.3;    // log-mel value mapped to +1
  double floor = 1e-5;
};

/// Mel magnitudes of each frame (frames x n_mels).
inline Matrix mel_spectrogram(const Matrix& magnitude, const Matrix& fb) {
  if (magnitude.cols != fb.cols) throw ShapeError("mel_spectrogram: bin counts differ");
  return matmul_bt(magnitude, fb);
}

/// log(mel + floor) mapped affinely from [log_lo, log_hi] onto [-1, 1] and clamped.
inline Matrix scale_log_mel(const Matrix& mel, const LogMelConfig& cfg = {}) {
  Matrix out = mel;
  for (auto& v : out.data) {
    const double l = std::log(v + cfg.floor);
    v = std::clamp(2.0 * (l - cfg.log_lo) / (cfg.log_hi - cfg.log_lo) - 1.0, -1.0, 1.0);
  }
  return out;
}

inline Matrix log_mel(std::span<const double> samples, int rate = kSampleRate, const LogMelConfig& cfg = {}) {
  if (rate != kSampleRate) {
    throw DomainError("log_mel expects " + std::to_string(kSampleRate) + " Hz input, got " + std::to_string(rate));
  }
  static const Matrix fb = mel_filterbank();
  return scale_log_mel(mel_spectrogram(stft(samples).magnitude(), fb), cfg);
}

/// Orthonormal DCT-II of each row, first k coefficients.
inline Matrix dct2(const Matrix& frames, std::size_t k) {
  const std::size_t n = frames.cols;
  if (k > n) throw DomainError("dct2: more coefficients than inputs");
  Matrix out(frames.rows, k);
  for (std::size_t r = 0; r < frames.rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const double scale = std::sqrt((j == 0 ? 1.0 : 2.0) / static_cast<double>(n));
      double acc = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        acc += frames(r, i) * std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(j) /
                                       static_cast<double>(n));
      }
      out(r, j) = scale * acc;
    }
  }
  return out;
}

/// Inverse of the full orthonormal DCT-II (a DCT-III).
inline Matrix idct2(const Matrix& coeffs) {
  const std::size_t n = coeffs.cols;
  Matrix out(coeffs.rows, n);
  for (std::size_t r = 0; r < coeffs.rows; ++r) {
    for (std::size_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double scale = std::sqrt((j == 0 ? 1.0 : 2.0) / static_cast<double>(n));
        acc += scale * coeffs(r, j) *
               std::cos(std::numbers::pi * (static_cast<double>(i) + 0.5) * static_cast<double>(j) / static_cast<double>(n));
      }
      out(r, i) = acc;
    }
  }
  return out;
}

inline constexpr std::size_t kCepstra = 13;

inline Matrix mel_cepstra(const Matrix& log_mel_frames, std::size_t k = kCepstra) {
  return dct2(log_mel_frames, k);
}

/// Full linear convolution via FFT.
inline std::vector<double> convolve(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw DomainError("convolve: empty input");
  const std::size_t out_len = a.size() + b.size() - 1;
  std::size_t n = 1;
  while (n < out_len) n <<= 1;
  detail::RealFft fa(n), fb(n);
  std::fill(fa.input().begin(), fa.input().end(), 0.0);
  std::fill(fb.input().begin(), fb.input().end(), 0.0);
  std::copy(a.begin(), a.end(), fa.input().begin());
  std::copy(b.begin(), b.end(), fb.input().begin());
  const auto sa = fa.execute();
  const auto sb = fb.execute();
  detail::InverseRealFft inv(n);
  auto in = inv.input();
  for (std::size_t k = 0; k < in.size(); ++k) {
    const std::complex<double> p = std::complex<double>(sa[k][0], sa[k][1]) * std::complex<double>(sb[k][0], sb[k][1]);
    in[k][0] = p.real();
    in[k][1] = p.imag();
  }
  const auto y = inv.execute();
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = y[i] / static_cast<double>(n);
  return out;
}

}  // namespace csb
