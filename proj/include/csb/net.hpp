#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "csb/error.hpp"
#include "csb/rng.hpp"

namespace csb {

/// Conditioned MLP layout: [x_t ++ time embedding ++ cond] -> `depth` SiLU
/// layers of `width` units -> linear output of dimension x_dim.
struct MlpShape {
  std::size_t x_dim = 2;
  std::size_t time_embed = 32;
  std::size_t cond_dim = 0;
  std::size_t width = 128;
  std::size_t depth = 4;

  std::size_t in_dim() const noexcept { return x_dim + time_embed + cond_dim; }
  std::size_t n_layers() const noexcept { return depth + 1; }
  std::size_t layer_in(std::size_t l) const noexcept { return l == 0 ? in_dim() : width; }
  std::size_t layer_out(std::size_t l) const noexcept { return l == depth ? x_dim : width; }

  std::size_t n_values() const noexcept {
    std::size_t n = 0;
    for (std::size_t l = 0; l < n_layers(); ++l) n += layer_out(l) * (layer_in(l) + 1);
    return n;
  }

  bool operator==(const MlpShape&) const = default;
};

inline double silu(double z) { return z / (1.0 + std::exp(-z)); }
inline double silu_grad(double z) {
  const double s = 1.0 / (1.0 + std::exp(-z));
  return s * (1.0 + z * (1.0 - s));
}

/// Sinusoidal embedding of a scalar time coordinate: sin/cos pairs at log-spaced
/// angular frequencies from 1 to 1000.
inline Vec time_embedding(double t, std::size_t dim) {
  Vec e(dim, 0.0);
  const std::size_t half = dim / 2;
  for (std::size_t k = 0; k < half; ++k) {
    const double frac = half > 1 ? static_cast<double>(k) / static_cast<double>(half - 1) : 0.0;
    const double w = std::exp(frac * std::log(1000.0));
    e[k] = std::sin(w * t);
    e[half + k] = std::cos(w * t);
  }
  return e;
}

/// Flat parameter vector with per-layer views. Weights are row-major (out x in),
/// followed by the layer bias.
class DenoiserParams {
 public:
  DenoiserParams() = default;
  explicit DenoiserParams(MlpShape shape) : shape_(shape), values_(shape.n_values(), 0.0) {
    std::size_t off = 0;
    for (std::size_t l = 0; l < shape_.n_layers(); ++l) {
      offsets_.push_back(off);
      off += shape_.layer_out(l) * (shape_.layer_in(l) + 1);
    }
  }

  /// Scaled-normal hidden weights (variance 1/fan_in), zero biases. The output
  /// layer starts at zero unless `zero_output` is false.
  static DenoiserParams init(MlpShape shape, Rng& rng, bool zero_output = true) {
    DenoiserParams p(shape);
    for (std::size_t l = 0; l < shape.n_layers(); ++l) {
      if (l == shape.depth && zero_output) continue;
      const double scale = 1.0 / std::sqrt(static_cast<double>(shape.layer_in(l)));
      for (auto& w : p.weight(l)) w = scale * rng.normal();
    }
    return p;
  }

  const MlpShape& shape() const noexcept { return shape_; }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> weight(std::size_t l) {
    return {values_.data() + offsets_.at(l), shape_.layer_out(l) * shape_.layer_in(l)};
  }
  std::span<const double> weight(std::size_t l) const {
    return {values_.data() + offsets_.at(l), shape_.layer_out(l) * shape_.layer_in(l)};
  }
  std::span<double> bias(std::size_t l) {
    return {values_.data() + offsets_.at(l) + shape_.layer_out(l) * shape_.layer_in(l),
            shape_.layer_out(l)};
  }
  std::span<const double> bias(std::size_t l) const {
    return {values_.data() + offsets_.at(l) + shape_.layer_out(l) * shape_.layer_in(l),
            shape_.layer_out(l)};
  }
  std::size_t offset(std::size_t l) const { return offsets_.at(l); }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  bool operator==(const DenoiserParams& o) const {
    return shape_ == o.shape_ && values_ == o.values_;
  }

 private:
  MlpShape shape_{};
  Vec values_;
  std::vector<std::size_t> offsets_;
};

struct NetInput {
  Vec x;
  double t = 0.0;
  Vec cond;
};

namespace detail {

inline Vec assemble_input(const MlpShape& s, std::span<const double> x, double t,
                          std::span<const double> cond) {
  if (x.size() != s.x_dim) throw ShapeError("network state dimension mismatch");
  if (cond.size() != s.cond_dim) throw ShapeError("network conditioning dimension mismatch");
  Vec in;
  in.reserve(s.in_dim());
  in.insert(in.end(), x.begin(), x.end());
  const Vec e = time_embedding(t, s.time_embed);
  in.insert(in.end(), e.begin(), e.end());
  in.insert(in.end(), cond.begin(), cond.end());
  return in;
}

// Per-layer inputs and pre-activations of one forward pass.
struct Tape {
  std::vector<Vec> inputs;
  std::vector<Vec> pre;
};

inline Vec run(const DenoiserParams& p, Vec h, Tape* tape) {
  const auto& s = p.shape();
  for (std::size_t l = 0; l < s.n_layers(); ++l) {
    const std::size_t n_in = s.layer_in(l);
    const std::size_t n_out = s.layer_out(l);
    const auto w = p.weight(l);
    const auto b = p.bias(l);
    Vec z(n_out);
    for (std::size_t o = 0; o < n_out; ++o) {
      double acc = b[o];
      const double* row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) acc += row[i] * h[i];
      z[o] = acc;
    }
    if (tape) {
      tape->inputs.push_back(std::move(h));
      tape->pre.push_back(z);
    }
    if (l + 1 < s.n_layers()) {
      for (auto& v : z) v = silu(v);
    }
    h = std::move(z);
  }
  return h;
}

// Accumulates d loss / d params into grads given d loss / d output.
inline void backprop(const DenoiserParams& p, const Tape& tape, Vec delta, std::span<double> grads) {
  const auto& s = p.shape();
  for (std::size_t l = s.n_layers(); l-- > 0;) {
    const std::size_t n_in = s.layer_in(l);
    const std::size_t n_out = s.layer_out(l);
    if (l + 1 < s.n_layers()) {
      for (std::size_t o = 0; o < n_out; ++o) delta[o] *= silu_grad(tape.pre[l][o]);
    }
    const auto w = p.weight(l);
    const Vec& h = tape.inputs[l];
    double* gw = grads.data() + p.offset(l);
    double* gb = gw + n_out * n_in;
    Vec prev(l > 0 ? n_in : 0, 0.0);
    for (std::size_t o = 0; o < n_out; ++o) {
      const double d = delta[o];
      gb[o] += d;
      if (d == 0.0) continue;
      double* grow = gw + o * n_in;
      const double* row = w.data() + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) grow[i] += d * h[i];
      if (l > 0) {
        for (std::size_t i = 0; i < n_in; ++i) prev[i] += d * row[i];
      }
    }
    delta = std::move(prev);
  }
}

}  // namespace detail

/// Raw network output for one input. Deterministic: identical inputs give
/// bitwise-identical outputs.
inline Vec forward(const DenoiserParams& p, std::span<const double> x_t, double t,
                   std::span<const double> cond) {
  return detail::run(p, detail::assemble_input(p.shape(), x_t, t, cond), nullptr);
}

struct LossGrad {
  double loss = 0.0;
  std::vector<Vec> d_outputs;  // d loss / d output, one per batch item
};

/// Maps the network outputs of a batch to (loss, d loss / d outputs).
using BatchLossFn = std::function<LossGrad(const std::vector<Vec>& outputs)>;

struct LossAndGrads {
  double loss = 0.0;
  Vec grads;
};

/// Reverse-mode gradient of loss_fn(forward(p, batch)) with respect to every parameter.
inline LossAndGrads loss_and_grads(const DenoiserParams& p, const std::vector<NetInput>& batch,
                                   const BatchLossFn& loss_fn) {
  std::vector<detail::Tape> tapes(batch.size());
  std::vector<Vec> outputs;
  outputs.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    outputs.push_back(detail::run(
        p, detail::assemble_input(p.shape(), batch[i].x, batch[i].t, batch[i].cond), &tapes[i]));
  }
  LossGrad lg = loss_fn(outputs);
  if (!std::isfinite(lg.loss)) {
    std::ostringstream msg;
    msg << "non-finite loss " << lg.loss << " on a batch of " << batch.size() << " items";
    if (!batch.empty()) msg << " (first item t=" << batch.front().t << ")";
    throw TrainingError(msg.str());
  }
  if (lg.d_outputs.size() != batch.size()) throw ShapeError("loss gradient count mismatch");
  LossAndGrads out{lg.loss, Vec(p.size(), 0.0)};
  for (std::size_t i = 0; i < batch.size(); ++i) {
    if (lg.d_outputs[i].size() != p.shape().x_dim) throw ShapeError("loss gradient size mismatch");
    detail::backprop(p, tapes[i], std::move(lg.d_outputs[i]), out.grads);
  }
  return out;
}

struct AdamState {
  Vec m;
  Vec v;
  std::uint64_t step = 0;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t n, double learning_rate) : m(n, 0.0), v(n, 0.0), lr(learning_rate) {}
};

/// Bias-corrected Adam update of p in place.
inline void adam_step(AdamState& state, DenoiserParams& p, std::span<const double> grads) {
  if (grads.size() != p.size() || state.m.size() != p.size() || state.v.size() != p.size()) {
    throw ShapeError("adam_step: parameter, gradient and moment sizes differ");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  auto values = p.values();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double g = grads[i];
    state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
    state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    values[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

/// Half-cosine decay from `base` at step 0 towards 0 at `total`.
inline double cosine_lr(double base, std::size_t step, std::size_t total) {
  if (total == 0) return base;
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return 0.5 * base * (1.0 + std::cos(std::numbers::pi * frac));
}

struct EmaParams {
  DenoiserParams params;
  double decay = 0.999;
};

/// theta_minus <- mu theta_minus + (1 - mu) theta.
inline void ema_update(EmaParams& target, const DenoiserParams& online) {
  if (!(target.params.shape() == online.shape())) throw ShapeError("ema_update shape mismatch");
  const double mu = target.decay;
  auto dst = target.params.values();
  const auto src = online.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = mu * dst[i] + (1.0 - mu) * src[i];
}

// ---------------------------------------------------------------------------
// Checkpoint container. All fields little-endian:
//   "CSBCKPT\0" | u32 version | u32 x_dim, time_embed, cond_dim, width, depth
//   | u64 n_values | f64 ema_decay | f64[n] online | f64[n] target
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'C', 'S', 'B', 'C', 'K', 'P', 'T', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {
template <typename T>
void put_le(std::string& out, T value) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  const U bits = std::bit_cast<U>(value);
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t& pos) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  if (pos + sizeof(U) > in.size()) throw ParseError("checkpoint truncated");
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    bits |= static_cast<U>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  pos += sizeof(U);
  return std::bit_cast<T>(bits);
}
}  // namespace detail

struct Checkpoint {
  DenoiserParams online;
  EmaParams target;
};

inline std::string encode_checkpoint(const Checkpoint& ck) {
  const auto& s = ck.online.shape();
  if (!(ck.target.params.shape() == s)) throw ShapeError("checkpoint online/target shapes differ");
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  for (std::size_t d : {s.x_dim, s.time_embed, s.cond_dim, s.width, s.depth}) {
    detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(d));
  }
  detail::put_le<std::uint64_t>(out, ck.online.size());
  detail::put_le<double>(out, ck.target.decay);
  for (double v : ck.online.values()) detail::put_le<double>(out, v);
  for (double v : ck.target.params.values()) detail::put_le<double>(out, v);
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0) {
    throw ParseError("not a checkpoint (bad magic)");
  }
  std::size_t pos = sizeof(kCheckpointMagic);
  const auto version = detail::get_le<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) {
    throw ParseError("unsupported checkpoint version " + std::to_string(version));
  }
  MlpShape s;
  s.x_dim = detail::get_le<std::uint32_t>(bytes, pos);
  s.time_embed = detail::get_le<std::uint32_t>(bytes, pos);
  s.cond_dim = detail::get_le<std::uint32_t>(bytes, pos);
  s.width = detail::get_le<std::uint32_t>(bytes, pos);
  s.depth = detail::get_le<std::uint32_t>(bytes, pos);
  const auto n = detail::get_le<std::uint64_t>(bytes, pos);
  if (n != s.n_values()) throw ParseError("checkpoint parameter count does not match its header");
  Checkpoint ck{DenoiserParams(s), EmaParams{DenoiserParams(s), 0.0}};
  ck.target.decay = detail::get_le<double>(bytes, pos);
  for (auto& v : ck.online.values()) v = detail::get_le<double>(bytes, pos);
  for (auto& v : ck.target.params.values()) v = detail::get_le<double>(bytes, pos);
  if (pos != bytes.size()) throw ParseError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path + " for writing");
  const auto bytes = encode_checkpoint(ck);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open checkpoint " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace csb
