#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <utility>
#include <vector>

#include "csb/error.hpp"
#include "csb/matrix.hpp"
#include "csb/rng.hpp"

namespace csb {

/// H x W grid of C-dimensional feature vectors, stored row-major with
/// channels innermost. Stand-in for image-encoder output.
struct FeatureGrid {
  std::size_t h = 0;
  std::size_t w = 0;
  std::size_t c = 0;
  std::vector<double> data;

  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
      : h(height), w(width), c(channels), data(height * width * channels, fill) {}

  double& at(std::size_t y, std::size_t x, std::size_t ch) { return data[(y * w + x) * c + ch]; }
  double at(std::size_t y, std::size_t x, std::size_t ch) const { return data[(y * w + x) * c + ch]; }

  bool operator==(const FeatureGrid&) const = default;
};

inline FeatureGrid mirror_horizontal(const FeatureGrid& g) {
  FeatureGrid out(g.h, g.w, g.c);
  for (std::size_t y = 0; y < g.h; ++y)
    for (std::size_t x = 0; x < g.w; ++x)
      for (std::size_t ch = 0; ch < g.c; ++ch) out.at(y, g.w - 1 - x, ch) = g.at(y, x, ch);
  return out;
}

/// Eye-view masking: the left view zeroes the leftmost floor(W/4) columns and
/// the right view the rightmost ones. With `mask_same_side` false the two
/// quarters are exchanged. Unmasked cells are copied untouched.
inline std::pair<FeatureGrid, FeatureGrid> viewpoint_split(const FeatureGrid& g,
                                                           bool mask_same_side = true) {
  if (g.w < 4 || g.h < 4) throw DomainError("viewpoint_split needs a grid of at least 4x4");
  const std::size_t q = g.w / 4;
  auto mask = [&](std::size_t x0, std::size_t x1) {
    FeatureGrid out = g;
    for (std::size_t y = 0; y < g.h; ++y)
      for (std::size_t x = x0; x < x1; ++x)
        for (std::size_t ch = 0; ch < g.c; ++ch) out.at(y, x, ch) = 0.0;
    return out;
  };
  FeatureGrid left_quarter = mask(0, q);
  FeatureGrid right_quarter = mask(g.w - q, g.w);
  if (mask_same_side) return {std::move(left_quarter), std::move(right_quarter)};
  return {std::move(right_quarter), std::move(left_quarter)};
}

/// 2-D sinusoidal absolute position code: the first half of the channels
/// encode the row, the second half the column.
inline FeatureGrid positional_encoding(std::size_t h, std::size_t w, std::size_t c) {
  FeatureGrid pe(h, w, c);
  const std::size_t half = c / 2;
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        const bool row_part = ch < half;
        const std::size_t k = row_part ? ch : ch - half;
        const std::size_t span = row_part ? std::max<std::size_t>(half, 1) : std::max<std::size_t>(c - half, 1);
        const double pos = static_cast<double>(row_part ? y : x);
        const double freq = std::pow(100.0, -static_cast<double>(k / 2 * 2) / static_cast<double>(span));
        pe.at(y, x, ch) = (k % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
      }
    }
  }
  return pe;
}

struct SpeakerPose {
  double d = 0.0;      // meters to the source viewpoint
  double alpha = 0.0;  // XY-plane rotation, wrapped to (-pi, pi]

  SpeakerPose(double distance, double angle) : d(distance), alpha(wrap(angle)) {
    if (!(distance >= 0.0) || !std::isfinite(distance)) throw DomainError("speaker distance must be >= 0");
    if (!std::isfinite(angle)) throw DomainError("speaker angle must be finite");
  }

  static double wrap(double a) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    double r = std::fmod(a, two_pi);
    if (r <= -std::numbers::pi) r += two_pi;
    if (r > std::numbers::pi) r -= two_pi;
    return r;
  }
};

/// (d, sin alpha, cos alpha).
inline std::array<double, 3> pose_encoding(const SpeakerPose& p) {
  return {p.d, std::sin(p.alpha), std::cos(p.alpha)};
}

struct EnergyQuantizer {
  std::size_t bins = 32;
  double lo = -6.0;  // log10 energy mapped to code 0
  double hi = 2.0;   // log10 energy mapped past the last code
};

/// Per-frame, per-channel log-energy codes; codes[f * 2 + ch].
struct EnergyVector {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<int> codes;

  int code(std::size_t f, std::size_t ch) const { return codes[f * 2 + ch]; }
};

inline int quantize_log_energy(double energy, const EnergyQuantizer& q) {
  constexpr double floor_eps = 1e-8;
  const double le = std::log10(energy + floor_eps);
  const double pos = std::floor(static_cast<double>(q.bins) * (le - q.lo) / (q.hi - q.lo));
  return static_cast<int>(std::clamp(pos, 0.0, static_cast<double>(q.bins - 1)));
}

/// Quantized L2 norm of each magnitude frame of both channels.
inline EnergyVector energy_vector(const Matrix& spec_left, const Matrix& spec_right,
                                  const EnergyQuantizer& q = {}) {
  if (spec_left.rows != spec_right.rows) throw ShapeError("energy_vector: frame counts differ");
  if (q.bins < 1 || !(q.hi > q.lo)) throw DomainError("energy quantizer range is invalid");
  EnergyVector ev{spec_left.rows, q.bins, std::vector<int>(spec_left.rows * 2)};
  for (std::size_t f = 0; f < spec_left.rows; ++f) {
    const Matrix* chans[2] = {&spec_left, &spec_right};
    for (std::size_t ch = 0; ch < 2; ++ch) {
      double sq = 0.0;
      for (double m : chans[ch]->row(f)) sq += m * m;
      ev.codes[f * 2 + ch] = quantize_log_energy(std::sqrt(sq), q);
    }
  }
  return ev;
}

/// Scaled dot-product attention weights softmax(Q K^T / sqrt(d_k)); each row sums to one.
inline Matrix attention_weights(const Matrix& q, const Matrix& k, std::size_t d_k) {
  if (k.rows == 0) throw DomainError("attention over an empty key sequence");
  if (q.cols != k.cols || d_k == 0) throw ShapeError("attention query/key dimensions differ");
  Matrix s = matmul_bt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  for (std::size_t i = 0; i < s.rows; ++i) {
    auto r = s.row(i);
    double mx = -INFINITY;
    for (auto& v : r) {
      v *= scale;
      mx = std::max(mx, v);
    }
    double sum = 0.0;
    for (auto& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : r) v /= sum;
  }
  return s;
}

inline Matrix attend(const Matrix& q, const Matrix& k, const Matrix& v, std::size_t d_k) {
  if (k.rows != v.rows) throw ShapeError("attention keys and values differ in length");
  const Matrix a = attention_weights(q, k, d_k);
  Matrix out(q.rows, v.cols);
  for (std::size_t i = 0; i < q.rows; ++i)
    for (std::size_t j = 0; j < k.rows; ++j) {
      const double w = a(i, j);
      for (std::size_t c = 0; c < v.cols; ++c) out(i, c) += w * v(j, c);
    }
  return out;
}

inline Matrix cross_modal_attention(const Matrix& q_states, const Matrix& kv_states, std::size_t d_k) {
  return attend(q_states, kv_states, kv_states, d_k);
}

/// Weights of the modal interaction pipeline. Matrices are (out x in).
struct SpatialWeights {
  std::size_t bins = 32;
  std::size_t embed_dim = 8;
  std::size_t d_model = 16;
  std::size_t grid_channels = 8;

  Matrix code_embedding;  // bins x embed_dim
  Matrix conv1;           // d_model x (3 * (2 embed_dim + 3)), taps outermost
  Vec conv1_bias;
  Matrix conv2;           // d_model x (3 * d_model)
  Vec conv2_bias;
  Matrix token_proj;      // d_model x grid_channels
  Matrix combine;         // d_model x (2 d_model): [left attention, right attention]
  Matrix text_proj;       // d_model x d_model, output projection of fuse_text

  std::size_t conv_in() const noexcept { return 2 * embed_dim + 3; }

  static SpatialWeights zeros(std::size_t bins, std::size_t embed_dim, std::size_t d_model,
                              std::size_t grid_channels) {
    SpatialWeights w;
    w.bins = bins;
    w.embed_dim = embed_dim;
    w.d_model = d_model;
    w.grid_channels = grid_channels;
    w.code_embedding = Matrix(bins, embed_dim);
    w.conv1 = Matrix(d_model, 3 * w.conv_in());
    w.conv1_bias = Vec(d_model, 0.0);
    w.conv2 = Matrix(d_model, 3 * d_model);
    w.conv2_bias = Vec(d_model, 0.0);
    w.token_proj = Matrix(d_model, grid_channels);
    w.combine = Matrix(d_model, 2 * d_model);
    w.text_proj = Matrix(d_model, d_model);
    return w;
  }

  static SpatialWeights random(std::size_t bins, std::size_t embed_dim, std::size_t d_model,
                               std::size_t grid_channels, Rng& rng) {
    auto w = zeros(bins, embed_dim, d_model, grid_channels);
    auto fill = [&](Matrix& m) {
      const double s = 1.0 / std::sqrt(static_cast<double>(m.cols));
      for (auto& v : m.data) v = s * rng.normal();
    };
    fill(w.code_embedding);
    for (auto& v : w.code_embedding.data) v *= std::sqrt(static_cast<double>(embed_dim));
    fill(w.conv1);
    fill(w.conv2);
    fill(w.token_proj);
    fill(w.combine);
    fill(w.text_proj);
    return w;
  }
};

namespace detail {
// Same-padded kernel-3 1-D convolution over rows of x.
inline Matrix conv1d_k3(const Matrix& x, const Matrix& w, const Vec& bias) {
  const std::size_t in = x.cols;
  if (w.cols != 3 * in) throw ShapeError("conv1d kernel width does not match input channels");
  Matrix out(x.rows, w.rows);
  for (std::size_t f = 0; f < x.rows; ++f) {
    for (std::size_t o = 0; o < w.rows; ++o) {
      double acc = bias[o];
      for (std::size_t tap = 0; tap < 3; ++tap) {
        const std::ptrdiff_t src = static_cast<std::ptrdiff_t>(f) + static_cast<std::ptrdiff_t>(tap) - 1;
        if (src < 0 || src >= static_cast<std::ptrdiff_t>(x.rows)) continue;
        for (std::size_t i = 0; i < in; ++i) acc += w(o, tap * in + i) * x(static_cast<std::size_t>(src), i);
      }
      out(f, o) = acc;
    }
  }
  return out;
}

inline double silu_act(double z) { return z / (1.0 + std::exp(-z)); }

inline Matrix linear(const Matrix& x, const Matrix& w) { return matmul_bt(x, w); }

inline Matrix grid_tokens(const FeatureGrid& g) {
  Matrix t(g.h * g.w, g.c);
  t.data = g.data;
  return t;
}
}  // namespace detail

/// Embeds energy codes, appends V_loc to every frame, two kernel-3 convolutions
/// (SiLU between) and mean pooling by 2. Output: ceil(F/2) x d_model.
inline Matrix conv_stack(const SpatialWeights& w, const EnergyVector& ve,
                         const std::array<double, 3>& vloc) {
  if (ve.bins != w.bins) throw ShapeError("energy codes use a different bin count than the weights");
  Matrix x(ve.frames, w.conv_in());
  for (std::size_t f = 0; f < ve.frames; ++f) {
    for (std::size_t ch = 0; ch < 2; ++ch) {
      const auto code = static_cast<std::size_t>(ve.code(f, ch));
      for (std::size_t e = 0; e < w.embed_dim; ++e) x(f, ch * w.embed_dim + e) = w.code_embedding(code, e);
    }
    for (std::size_t k = 0; k < 3; ++k) x(f, 2 * w.embed_dim + k) = vloc[k];
  }
  Matrix h = detail::conv1d_k3(x, w.conv1, w.conv1_bias);
  for (auto& v : h.data) v = detail::silu_act(v);
  h = detail::conv1d_k3(h, w.conv2, w.conv2_bias);
  Matrix pooled((h.rows + 1) / 2, h.cols);
  for (std::size_t p = 0; p < pooled.rows; ++p) {
    const std::size_t a = 2 * p;
    const std::size_t n = (a + 1 < h.rows) ? 2 : 1;
    for (std::size_t c = 0; c < h.cols; ++c) {
      double s = h(a, c);
      if (n == 2) s += h(a + 1, c);
      pooled(p, c) = s / static_cast<double>(n);
    }
  }
  return pooled;
}

/// Frame features attend over each view's tokens (position codes enter the
/// keys only); the two attended sequences are combined and added back
/// residually. Output: frames.rows x d_model.
inline Matrix build_spatial_embedding(const SpatialWeights& w, const FeatureGrid& left,
                                      const FeatureGrid& right, const Matrix& frames) {
  if (left.c != w.grid_channels || right.c != w.grid_channels) {
    throw ShapeError("view grid channels do not match the token projection");
  }
  if (frames.cols != w.d_model) throw ShapeError("frame features must have d_model columns");
  if (frames.rows == 0) throw DomainError("spatial embedding needs at least one frame");
  auto attend_view = [&](const FeatureGrid& g) {
    const Matrix tokens = detail::grid_tokens(g);
    const FeatureGrid pe = positional_encoding(g.h, g.w, g.c);
    Matrix keyed = tokens;
    for (std::size_t i = 0; i < keyed.data.size(); ++i) keyed.data[i] += pe.data[i];
    const Matrix keys = detail::linear(keyed, w.token_proj);
    const Matrix values = detail::linear(tokens, w.token_proj);
    return attend(frames, keys, values, w.d_model);
  };
  const Matrix al = attend_view(left);
  const Matrix ar = attend_view(right);
  Matrix both(frames.rows, 2 * w.d_model);
  for (std::size_t f = 0; f < frames.rows; ++f) {
    for (std::size_t c = 0; c < w.d_model; ++c) {
      both(f, c) = al(f, c);
      both(f, w.d_model + c) = ar(f, c);
    }
  }
  Matrix es = detail::linear(both, w.combine);
  for (std::size_t i = 0; i < es.data.size(); ++i) es.data[i] += frames.data[i];
  return es;
}

/// V_f = h_txt + attention(h_txt, E_s, E_s) P^T.
inline Matrix fuse_text(const SpatialWeights& w, const Matrix& h_txt, const Matrix& es) {
  if (h_txt.cols != w.d_model || es.cols != w.d_model) throw ShapeError("fuse_text: d_model mismatch");
  const Matrix ctx = cross_modal_attention(h_txt, es, w.d_model);
  Matrix vf = detail::linear(ctx, w.text_proj);
  for (std::size_t i = 0; i < vf.data.size(); ++i) vf.data[i] += h_txt.data[i];
  return vf;
}

/// Decoder conditioning vector: mean over V_f tokens followed by mean over E_s.
inline Vec pooled_condition(const Matrix& vf, const Matrix& es) {
  Vec cond(vf.cols + es.cols, 0.0);
  for (std::size_t r = 0; r < vf.rows; ++r)
    for (std::size_t c = 0; c < vf.cols; ++c) cond[c] += vf(r, c) / static_cast<double>(vf.rows);
  for (std::size_t r = 0; r < es.rows; ++r)
    for (std::size_t c = 0; c < es.cols; ++c) cond[vf.cols + c] += es(r, c) / static_cast<double>(es.rows);
  return cond;
}

struct SpatialOutputs {
  Matrix es;
  Matrix vf;
  Vec cond;
};

/// Full modal interaction pass: scene grid + pose + stereo magnitudes + text states.
inline SpatialOutputs modal_interaction(const SpatialWeights& w, const FeatureGrid& scene,
                                        const SpeakerPose& pose, const Matrix& spec_left,
                                        const Matrix& spec_right, const Matrix& h_txt,
                                        const EnergyQuantizer& q = {}, bool mask_same_side = true) {
  auto [left, right] = viewpoint_split(scene, mask_same_side);
  const EnergyVector ve = energy_vector(spec_left, spec_right, q);
  const Matrix frames = conv_stack(w, ve, pose_encoding(pose));
  Matrix es = build_spatial_embedding(w, left, right, frames);
  Matrix vf = fuse_text(w, h_txt, es);
  Vec cond = pooled_condition(vf, es);
  return {std::move(es), std::move(vf), std::move(cond)};
}

}  // namespace csb
