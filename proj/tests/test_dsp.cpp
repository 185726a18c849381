#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "csb/dsp.hpp"
#include "csb/rng.hpp"

using namespace csb;

namespace {

std::vector<double> sine(double freq, std::size_t n, double amp = 0.5, int rate = kSampleRate) {
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = amp * std::sin(2.0 * std::numbers::pi * freq * i / rate);
  return x;
}

}  // namespace

TEST(Wav, RoundTripWithinOneLsb) {
  StereoWaveform w{kSampleRate, {sine(1000.0, 4000), sine(1000.0, 4000, -0.9)}};
  const auto path = std::filesystem::temp_directory_path() / "csb_dsp_rt.wav";
  write_wav(path.string(), w);
  const auto back = read_wav(path.string());
  std::filesystem::remove(path);
  ASSERT_EQ(back.channel_count(), 2u);
  ASSERT_EQ(back.length(), 4000u);
  EXPECT_EQ(back.rate, kSampleRate);
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 4000; ++i) EXPECT_LE(std::abs(back.channels[c][i] - w.channels[c][i]), std::ldexp(1.0, -15));
}

TEST(Wav, MonoAndClipping) {
  StereoWaveform w{16000, {{0.0, 1.5, -1.5, 0.25}}};
  const auto back = decode_wav(encode_wav(w));
  ASSERT_EQ(back.channel_count(), 1u);
  EXPECT_EQ(back.rate, 16000);
  EXPECT_NEAR(back.channels[0][1], 32767.0 / 32768.0, 1e-12);
  EXPECT_EQ(back.channels[0][2], -1.0);
  EXPECT_EQ(back.channels[0][3], 0.25);
}

TEST(Wav, MalformedInputNamesTheChunk) {
  StereoWaveform w{kSampleRate, {sine(440.0, 100), sine(440.0, 100)}};
  const auto bytes = encode_wav(w);
  auto expect_error = [](const std::string& b, const std::string& fragment) {
    try {
      decode_wav(b);
      FAIL() << "no error for " << fragment;
    } catch (const ParseError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_error(bytes.substr(0, bytes.size() - 10), "data");
  expect_error("JUNKJUNKJUNK", "RIFF");
  auto pcm8 = bytes;
  pcm8[34] = 8;
  expect_error(pcm8, "fmt");
  auto float_fmt = bytes;
  float_fmt[20] = 3;
  expect_error(float_fmt, "fmt");
  EXPECT_THROW(read_wav("/nonexistent/x.wav"), ParseError);
  EXPECT_THROW(encode_wav(StereoWaveform{kSampleRate, {{0.0}, {0.0, 1.0}}}), ShapeError);
}

TEST(Stft, FrameCountAndShape) {
  EXPECT_EQ(stft_frame_count(512, 128), 5u);
  EXPECT_EQ(stft_frame_count(513, 128), 6u);
  const auto s = stft(sine(1000.0, 2000));
  EXPECT_EQ(s.frames, stft_frame_count(2000, kHop));
  EXPECT_EQ(s.bins, kFrameSize / 2 + 1);
  EXPECT_THROW(stft(std::vector<double>(100, 0.0)), DomainError);
}

TEST(Stft, BinCentredSinePeak) {
  const std::size_t bin = 40;
  const double freq = static_cast<double>(bin) * kSampleRate / kFrameSize;
  const auto s = stft(sine(freq, 8192));
  const auto mag = s.magnitude();
  const std::size_t f = s.frames / 2;
  std::size_t arg = 0;
  for (std::size_t k = 0; k < s.bins; ++k)
    if (mag(f, k) > mag(f, arg)) arg = k;
  EXPECT_EQ(arg, bin);
  for (std::size_t k = 0; k < s.bins; ++k) {
    if (k + 2 >= bin && k <= bin + 2) continue;
    EXPECT_GE(20.0 * std::log10(mag(f, bin) / (mag(f, k) + 1e-300)), 20.0) << k;
  }
}

TEST(Stft, ZeroSignalAndParseval) {
  for (double v : stft(std::vector<double>(1024, 0.0)).magnitude().data) EXPECT_EQ(v, 0.0);
  Rng rng(1);
  std::vector<double> x(4096);
  for (auto& v : x) v = rng.normal();
  const auto s = stft(x);
  const auto win = hann_window(kFrameSize);
  // Frame 4 starts at sample 4 * hop - 256 = 256, clear of the reflection.
  std::vector<double> frame(kFrameSize);
  for (std::size_t i = 0; i < kFrameSize; ++i) frame[i] = x[256 + i] * win[i];
  EXPECT_NEAR(frame_parseval_ratio(s, frame, 4), 1.0, 1e-6);
}

TEST(Mel, FilterbankCoverage) {
  const auto fb = mel_filterbank();
  EXPECT_EQ(fb.rows, kMelBins);
  EXPECT_EQ(fb.cols, kFrameSize / 2 + 1);
  for (std::size_t m = 0; m < fb.rows; ++m) {
    double s = 0.0;
    for (double v : fb.row(m)) {
      EXPECT_GE(v, 0.0);
      s += v;
    }
    EXPECT_GT(s, 0.0) << m;
  }
  for (std::size_t k = 0; k + 1 < fb.cols; ++k) {
    double s = 0.0;
    for (std::size_t m = 0; m < fb.rows; ++m) s += fb(m, k);
    EXPECT_GT(s, 0.0) << "orphaned bin " << k;
  }
  EXPECT_THROW(mel_filterbank(300), DomainError);
  EXPECT_THROW(mel_filterbank(80, kSampleRate, kFrameSize, 5000.0, 4000.0), DomainError);
}

TEST(Mel, MelScaleRoundTrip) {
  for (double f : {0.0, 100.0, 1000.0, 11025.0}) EXPECT_NEAR(mel_to_hz(hz_to_mel(f)), f, 1e-9);
  EXPECT_NEAR(hz_to_mel(1000.0), 1000.0, 0.1);
}

TEST(LogMel, SilenceClampsAndLoudnessIsMonotone) {
  const auto quiet = log_mel(std::vector<double>(2048, 0.0));
  EXPECT_EQ(quiet.cols, kMelBins);
  for (double v : quiet.data) EXPECT_EQ(v, -1.0);
  const auto a = log_mel(sine(700.0, 4096, 0.05));
  const auto b = log_mel(sine(700.0, 4096, 0.5));
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    EXPECT_GE(b.data[i], a.data[i]);
    EXPECT_GE(a.data[i], -1.0);
    EXPECT_LE(b.data[i], 1.0);
  }
  EXPECT_THROW(log_mel(sine(700.0, 4096), 16000), DomainError);
}

TEST(Cepstra, ConstantFrameAndLinearity) {
  Matrix c(1, kMelBins, 0.37);
  const auto cc = mel_cepstra(c);
  EXPECT_NEAR(cc(0, 0), 0.37 * std::sqrt(static_cast<double>(kMelBins)), 1e-12);
  for (std::size_t k = 1; k < kCepstra; ++k) EXPECT_NEAR(cc(0, k), 0.0, 1e-12);
  Rng rng(2);
  Matrix a(3, kMelBins), b(3, kMelBins), s(3, kMelBins);
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    a.data[i] = rng.normal();
    b.data[i] = rng.normal();
    s.data[i] = a.data[i] + b.data[i];
  }
  const auto ca = mel_cepstra(a), cb = mel_cepstra(b), cs = mel_cepstra(s);
  for (std::size_t i = 0; i < cs.data.size(); ++i) EXPECT_NEAR(cs.data[i], ca.data[i] + cb.data[i], 1e-12);
}

TEST(Cepstra, FullDctRoundTrip) {
  Rng rng(3);
  Matrix a(4, kMelBins);
  for (auto& v : a.data) v = rng.normal();
  const auto back = idct2(dct2(a, kMelBins));
  for (std::size_t i = 0; i < a.data.size(); ++i) EXPECT_NEAR(back.data[i], a.data[i], 1e-9);
  EXPECT_THROW(dct2(a, kMelBins + 1), DomainError);
}

TEST(Convolve, MatchesDirectSum) {
  const std::vector<double> a{1.0, 2.0, -1.0, 0.5}, b{0.5, -0.25, 3.0};
  const auto c = convolve(a, b);
  ASSERT_EQ(c.size(), 6u);
  for (std::size_t n = 0; n < c.size(); ++n) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (n >= i && n - i < b.size()) s += a[i] * b[n - i];
    EXPECT_NEAR(c[n], s, 1e-12);
  }
  EXPECT_THROW(convolve(std::vector<double>{}, b), DomainError);
}
